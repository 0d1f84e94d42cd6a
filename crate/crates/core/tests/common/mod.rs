#![allow(dead_code)]

use iris_core::guest::RNG_ALGORITHM;
use iris_core::hypervisor::{Block, CoverageBitmap, BLOCK_COUNT};
use iris_core::recorder::{ExitMetrics, SeedEntry, TraceFile, TraceHeader, TraceRecord, VmSeed};
use iris_core::vmx::{Field, GprId, FIELD_COUNT, GPR_COUNT};
use proptest::prelude::*;

fn coverage() -> impl Strategy<Value = CoverageBitmap> {
    proptest::collection::vec(0..BLOCK_COUNT as u16, 0..48).prop_map(|ids| {
        let mut c = CoverageBitmap::new();
        for id in ids {
            c.set(Block::from_id(id).unwrap());
        }
        c
    })
}

fn vmcs_entries(max: usize) -> impl Strategy<Value = Vec<(usize, u64)>> {
    proptest::collection::vec((0..FIELD_COUNT, any::<u64>()), 0..=max)
}

pub fn record() -> impl Strategy<Value = TraceRecord> {
    (
        any::<u16>(),
        proptest::collection::vec(any::<u64>(), GPR_COUNT),
        vmcs_entries(32),
        vmcs_entries(8),
        coverage(),
        any::<u64>(),
    )
        .prop_map(|(reason, gprs, reads, writes, coverage, cycles)| {
            let all = Field::all();
            TraceRecord {
                seed: VmSeed {
                    exit_reason: reason,
                    gpr_entries: GprId::all().iter().zip(gprs).map(|(&id, x)| SeedEntry::gpr(id, x)).collect(),
                    read_entries: reads.into_iter().map(|(i, v)| SeedEntry::read(all[i], v)).collect(),
                },
                metrics: ExitMetrics {
                    coverage,
                    write_entries: writes.into_iter().map(|(i, v)| SeedEntry::write(all[i], v)).collect(),
                    cycles,
                },
            }
        })
}

pub fn trace() -> impl Strategy<Value = TraceFile> {
    (
        prop_oneof![Just("OS_BOOT".to_string()), "[A-Za-z_]{0,12}"],
        any::<u64>(),
        proptest::collection::vec(record(), 0..24),
    )
        .prop_map(|(workload, seed, records)| {
            let mut t = TraceFile::new(TraceHeader::new(&workload, RNG_ALGORITHM, seed));
            for r in records {
                t.push(r);
            }
            t
        })
}
