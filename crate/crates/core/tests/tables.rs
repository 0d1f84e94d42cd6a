use std::path::PathBuf;

use iris_core::guest::profiles_csv;
use iris_core::hypervisor::block_table_csv;
use iris_core::vmx::{exit_reason_csv, field_table_csv};

fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

// Set IRIS_BLESS=1 to rewrite the shipped tables.
fn check(name: &str, generated: String) {
    let path = data_dir().join(name);
    if std::env::var_os("IRIS_BLESS").is_some() {
        std::fs::write(&path, &generated).unwrap();
    }
    let shipped = std::fs::read_to_string(&path)
        .unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    assert!(!shipped.contains('\r'), "{name} has CR line endings");
    assert!(shipped.ends_with('\n'));
    assert_eq!(shipped, generated, "{name} is stale");
}

#[test]
fn field_table_matches_shipped_csv() {
    check("fields.csv", field_table_csv());
}

#[test]
fn exit_reason_table_matches_shipped_csv() {
    check("exit_reasons.csv", exit_reason_csv());
}

#[test]
fn profile_table_matches_shipped_csv() {
    check("profiles.csv", profiles_csv());
}

#[test]
fn block_table_matches_shipped_csv() {
    check("blocks.csv", block_table_csv());
}
