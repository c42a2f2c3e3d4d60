use labelleak_bench::{fixture, system, CLASSES};

#[test]
fn fixture_update_is_nonzero() {
    let fx = fixture(2);
    assert!(!fx.update.delta.is_zero());
    assert_eq!(fx.moments.classes(), CLASSES);
    assert_eq!(fx.history.rounds_completed, 1);
}

#[test]
fn system_columns_sum_to_zero() {
    let (a, u) = system(&fixture(1));
    for col in a.column_iter() {
        assert!(col.sum().abs() < 1e-12);
    }
    assert!(u.sum().abs() < 1e-12);
}
