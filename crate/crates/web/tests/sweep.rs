use anonbench_web::sweep;

#[test]
fn zero_degree_is_perfect_and_mask_degrades() {
    let s = sweep(60, "mask", 4).unwrap();
    assert_eq!(s.points.len(), 5);
    assert_eq!(s.cutoff_p, 2);
    let first = &s.points[0];
    assert_eq!(
        (first.map_original_queries, first.mndcg_original_queries),
        (100.0, 100.0)
    );
    assert_eq!(
        (first.map_anonymized_queries, first.mndcg_anonymized_queries),
        (100.0, 100.0)
    );
    assert!(s.points[4].map_original_queries < first.map_original_queries);
}

#[test]
fn rejects_out_of_range_sizes() {
    assert!(sweep(5, "mask", 0).is_err());
    assert!(sweep(10_000, "mask", 0).is_err());
    assert!(sweep(40, "paint", 0).is_err());
}
