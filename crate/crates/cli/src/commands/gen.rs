use std::path::PathBuf;

use anyhow::Result;
use iris_core::guest::{generate_workload, profiles_csv, ProgramFile, RNG_ALGORITHM};

use super::DEFAULT_RNG_SEED;
use crate::args::GenArgs;
use crate::{write_file, Ctx, EXIT_OK};

pub fn gen_workload(ctx: &Ctx, a: GenArgs) -> Result<u8> {
    if a.profiles {
        print!("{}", profiles_csv());
        return Ok(EXIT_OK);
    }
    let workload = a.workload.expect("clap requires a workload without --profiles");
    let rng_seed = ctx.rng_seed.unwrap_or(DEFAULT_RNG_SEED);
    let file = ProgramFile {
        workload,
        rng_algorithm: RNG_ALGORITHM.to_string(),
        rng_seed,
        program: generate_workload(workload, a.n_exits, rng_seed),
    };
    let out = ctx.output_path(
        &a.out.unwrap_or_else(|| PathBuf::from(format!("{}.irpg", workload.name().to_lowercase()))),
    );
    write_file(&out, file.to_bytes())?;
    ctx.say(format_args!(
        "wrote {} ({} ops, {} exits, seed {rng_seed})",
        out.display(),
        file.program.ops.len(),
        file.program.exit_count()
    ));
    ctx.emit_json(&serde_json::json!({
        "program": out.display().to_string(),
        "workload": workload.name(),
        "rng_seed": rng_seed,
        "ops": file.program.ops.len(),
        "exits": file.program.exit_count(),
    }))?;
    Ok(EXIT_OK)
}
