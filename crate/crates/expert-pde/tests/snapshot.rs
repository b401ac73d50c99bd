use std::fs;
use std::path::Path;

use expert_pde::snapshot::{self, file_len, GridKind, SnapshotError, SnapshotHeader, HEADER_LEN};
use expert_pde_core::{solve_sector, GridConfig, Lattice, Serial, SolveOptions, StencilMode};
use proptest::prelude::*;

fn solved_snapshot(dir: &Path) -> (std::path::PathBuf, SnapshotHeader, Vec<f64>) {
    let h = 0.25;
    let s = solve_sector(GridConfig::covering(3, h, 3.0).unwrap(), &SolveOptions::for_spacing(h), StencilMode::OnTheFly, &Serial)
        .unwrap();
    let header = SnapshotHeader::for_solved(GridKind::Sector, &s);
    let path = dir.join("field.bin");
    snapshot::save(&path, &header, s.field.values()).unwrap();
    (path, header, s.field.values().to_vec())
}

#[test]
fn round_trip_preserves_values_and_metadata() {
    let dir = tempfile::tempdir().unwrap();
    let (path, header, values) = solved_snapshot(dir.path());
    let snap = snapshot::load(&path).unwrap();
    assert_eq!(snap.header, header);
    assert!(snap.header.converged());
    assert_eq!(snap.header.residual.to_bits(), header.residual.to_bits());
    let same = snap.values.iter().zip(&values).all(|(a, b)| a.to_bits() == b.to_bits());
    assert!(same && snap.values.len() == values.len());
    assert_eq!(fs::metadata(&path).unwrap().len(), file_len(header.count));
}

#[test]
fn first_payload_value_is_the_origin() {
    let dir = tempfile::tempdir().unwrap();
    let (path, _, values) = solved_snapshot(dir.path());
    let snap = snapshot::load(&path).unwrap();
    let lattice = expert_pde_core::SectorLattice::new(snap.config(), StencilMode::OnTheFly, &Serial).unwrap();
    assert_eq!(lattice.index(0).as_slice(), &[0, 0]);
    assert_eq!(snap.values[0], values[0]);
}

#[test]
fn truncated_file_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let (path, _, _) = solved_snapshot(dir.path());
    let bytes = fs::read(&path).unwrap();
    for keep in [bytes.len() - 1, bytes.len() - 9, HEADER_LEN as usize + 3, 40, 4, 0] {
        fs::write(&path, &bytes[..keep]).unwrap();
        let err = snapshot::load(&path).unwrap_err();
        assert!(matches!(err, SnapshotError::Length { .. }), "keep {keep}: {err}");
    }
}

#[test]
fn corrupted_payload_fails_the_checksum() {
    let dir = tempfile::tempdir().unwrap();
    let (path, _, _) = solved_snapshot(dir.path());
    let mut bytes = fs::read(&path).unwrap();
    bytes[HEADER_LEN as usize + 17] ^= 0x40;
    fs::write(&path, &bytes).unwrap();
    assert!(matches!(snapshot::load(&path), Err(SnapshotError::Checksum { .. })));
}

fn patch(path: &Path, at: usize, bytes: &[u8]) {
    let mut data = fs::read(path).unwrap();
    data[at..at + bytes.len()].copy_from_slice(bytes);
    fs::write(path, data).unwrap();
}

#[test]
fn newer_version_is_unsupported() {
    let dir = tempfile::tempdir().unwrap();
    let (path, _, _) = solved_snapshot(dir.path());
    patch(&path, 8, &2u32.to_le_bytes());
    let err = snapshot::load(&path).unwrap_err();
    assert!(matches!(err, SnapshotError::Version { found: 2, .. }));
    assert!(err.to_string().contains("version 2 is not supported"));
}

#[test]
fn header_inconsistencies() {
    let dir = tempfile::tempdir().unwrap();
    let (path, header, _) = solved_snapshot(dir.path());
    let original = fs::read(&path).unwrap();

    patch(&path, 12, &7u32.to_le_bytes());
    assert!(matches!(snapshot::load(&path), Err(SnapshotError::Kind { kind: 7, .. })));

    fs::write(&path, &original).unwrap();
    patch(&path, 40, &(header.count + 1).to_le_bytes());
    assert!(matches!(snapshot::load(&path), Err(SnapshotError::Count { .. })));

    fs::write(&path, &original).unwrap();
    patch(&path, 20, &5u32.to_le_bytes());
    assert!(matches!(snapshot::load(&path), Err(SnapshotError::Header { .. })));

    fs::write(&path, &original).unwrap();
    patch(&path, 0, b"NOTAFELD");
    assert!(matches!(snapshot::load(&path), Err(SnapshotError::Magic { .. })));

    let missing = dir.path().join("missing.bin");
    let err = snapshot::load(&missing).unwrap_err();
    assert!(matches!(err, SnapshotError::Io { .. }));
    assert!(err.to_string().contains("missing.bin"));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]
    #[test]
    fn arbitrary_payloads_round_trip(values in proptest::collection::vec(proptest::num::f64::NORMAL | proptest::num::f64::ZERO, 6)) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.bin");
        let header = SnapshotHeader {
            kind: GridKind::Sector,
            n_experts: 3,
            m: 2,
            h: 0.5,
            count: 6,
            dt: 0.2,
            tolerance: 0.0025,
            residual: 0.5,
            iterations: 0,
        };
        snapshot::save(&path, &header, &values).unwrap();
        let snap = snapshot::load(&path).unwrap();
        prop_assert!(!snap.header.converged());
        prop_assert!(snap.values.iter().zip(&values).all(|(a, b)| a.to_bits() == b.to_bits()));
    }
}
