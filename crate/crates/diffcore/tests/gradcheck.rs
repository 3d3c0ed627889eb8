use diffcore::check::op_sweep;

#[test]
fn every_op_passes_finite_differences_in_f64() {
    for (kind, report) in op_sweep::<f64>(10, 2024).unwrap() {
        assert!(report.max_rel_err < 1e-5, "{kind:?}: {report:?}");
        assert!(report.checked > 0);
    }
}

#[test]
fn every_op_passes_finite_differences_in_f32() {
    for (kind, report) in op_sweep::<f32>(10, 99).unwrap() {
        assert!(report.max_rel_err < 1e-3, "{kind:?}: {report:?}");
    }
}
