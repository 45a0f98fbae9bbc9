use gpconv::analysis::ErrorNormKind;
use gpconv::experiments::{
    builtin_figure, builtin_figures, run_convergence, write_records_csv, write_rates_csv, Density, DesignRule,
};

fn csv_bytes(id: &str, n_max: usize, seed: u64) -> (Vec<u8>, Vec<u8>) {
    let mut cfg = builtin_figure(id).unwrap();
    cfg.n_schedule.retain(|&n| n <= n_max);
    cfg.eval_mesh_size = 4 * n_max;
    cfg.rate_tail = 3;
    let rep = run_convergence(&cfg, seed).unwrap();
    let (mut records, mut rates) = (Vec::new(), Vec::new());
    write_records_csv(&mut records, &rep).unwrap();
    write_rates_csv(&mut rates, std::slice::from_ref(&rep)).unwrap();
    (records, rates)
}

#[test]
fn identical_inputs_give_identical_csv_bytes() {
    for id in ["fig_warp", "fig_conv"] {
        assert_eq!(csv_bytes(id, 64, 7), csv_bytes(id, 64, 7));
    }
    let (records, rates) = csv_bytes("fig_warp", 64, 7);
    let text = String::from_utf8(records).unwrap();
    assert!(text.starts_with("n,fill_distance,error_l2,error_h1,error_sup,wall_time_ms,flags\n"));
    assert_eq!(text.lines().count(), 1 + 6);
    assert!(String::from_utf8(rates).unwrap().starts_with("config_id,norm,slope,intercept,r_squared,points_used\n"));
}

#[test]
fn figure_errors_do_not_grow_on_the_tail() {
    for cfg in builtin_figures() {
        let rep = run_convergence(&cfg, 0).unwrap();
        let e: Vec<f64> = rep.records.iter().map(|r| r.error(ErrorNormKind::L2).unwrap()).collect();
        let tail = &e[e.len() - 5..];
        assert!(tail.windows(2).all(|w| w[1] <= w[0]), "{}: {tail:?}", cfg.id);
    }
}

#[test]
fn random_designs_track_the_uniform_rate() {
    let uniform = builtin_figure("fig_warp").unwrap();
    let base = run_convergence(&uniform, 0).unwrap().rate(ErrorNormKind::L2).unwrap().slope;
    let mut slopes: Vec<f64> = (0..10u64)
        .map(|s| {
            let mut cfg = uniform.clone();
            cfg.id = format!("fig_warp_random_{s}");
            cfg.design = DesignRule::Random { seed: s, density: Density::Uniform };
            cfg.norms = vec![ErrorNormKind::L2];
            run_convergence(&cfg, 0).unwrap().rate(ErrorNormKind::L2).map_or(f64::NAN, |f| f.slope)
        })
        .collect();
    slopes.sort_by(f64::total_cmp);
    let median = 0.5 * (slopes[4] + slopes[5]);
    assert!((median - base).abs() <= 0.6, "median {median} vs uniform {base}; slopes {slopes:?}");
}
