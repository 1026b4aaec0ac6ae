#![allow(clippy::needless_range_loop)]

//! Acceptance suite: one test per criterion, each printing a PASS/FAIL
//! line (run with `--nocapture` to see them).
//!
//! Criteria 7 and 8 train the network at desk scale and take on the order
//! of an hour on a desktop CPU; they are `#[ignore]` so the default test
//! run stays fast, and a nightly job runs
//! `cargo test -p offres-cli --test acceptance -- --ignored --nocapture`.

use offres_cli::dataset::{self, CorpusParams};
use offres_core::autofocus::{autofocus_correct, median_over_signal, AutofocusConfig};
use offres_core::forward::{
    add_global_offres, demodulate_global, energy_radius, forward_exact, forward_freq_segmented,
    psf_local,
};
use offres_core::metrics::{iterate_apply, nrmse, ssim};
use offres_core::network::{
    apply, loss_l1, net_backward, net_forward, net_init, train, NetConfig, NetParams, NoopObserver,
};
use offres_core::phantom::{gen_field_map, gen_vessel_phantom};
use offres_core::recon::{
    grid_adjoint, grid_adjoint_nodcf, grid_forward, naive_adjoint_oracle, regrid_to_trajectory,
    GridParams,
};
use offres_core::rng::Rng;
use offres_core::trajectory::{generate_cones, refine_dcf_pipemenon, scale_readout, ConesTrajectory};
use offres_core::volume::{ComplexVolume, FieldMap};
use offres_core::{Complex64, KSpaceData};

fn report(criterion: &str, pass: bool, detail: String) {
    let tag = if pass { "PASS" } else { "FAIL" };
    println!("[{tag}] {criterion}: {detail}");
    assert!(pass, "{criterion}: {detail}");
}

fn rand_volume(shape: [usize; 3], seed: u64) -> ComplexVolume {
    let mut rng = Rng::new(seed);
    let data = (0..shape.iter().product())
        .map(|_| Complex64::new(rng.normal(), rng.normal()))
        .collect();
    ComplexVolume::from_data(shape, data).unwrap()
}

fn rand_ks(traj: &ConesTrajectory, seed: u64) -> KSpaceData {
    let mut rng = Rng::new(seed);
    KSpaceData {
        values: (0..traj.len()).map(|_| Complex64::new(rng.normal(), rng.normal())).collect(),
        traj_ref: traj.meta.id.clone(),
    }
}

#[test]
fn criterion_1_gridding_fidelity() {
    let start = std::time::Instant::now();
    let traj = generate_cones(16, 2, 512, 1.18e-3, 8.0, 16).unwrap();
    let params = GridParams::default();
    let shape = [16, 16, 16];

    // Gridding against the direct conjugate-phase oracle.
    let ks = rand_ks(&traj, 11);
    let fast = grid_adjoint(&ks, &traj, shape, &params).unwrap();
    let oracle = naive_adjoint_oracle(&ks, &traj, shape).unwrap();
    let rel = fast.rel_l2_error(&oracle).unwrap();

    // Adjointness: <Ax, y> == <x, A^H y> with dcf disabled.
    let x = rand_volume(shape, 12);
    let y = rand_ks(&traj, 13);
    let ax = grid_forward(&x, &traj, &params).unwrap();
    let aty = grid_adjoint_nodcf(&y, &traj, shape, &params).unwrap();
    let lhs: Complex64 = ax.values.iter().zip(&y.values).map(|(a, b)| a * b.conj()).sum();
    let rhs: Complex64 = x.data.iter().zip(&aty.data).map(|(a, b)| a * b.conj()).sum();
    let adj = (lhs - rhs).norm() / lhs.norm().max(rhs.norm());

    let elapsed = start.elapsed();
    report(
        "criterion 1 (gridding fidelity)",
        rel < 5e-3 && adj < 1e-2 && elapsed.as_secs() < 10,
        format!("oracle rel L2 {rel:.2e} (< 5e-3), adjointness {adj:.2e} (< 1e-2), {elapsed:.2?} (< 10 s)"),
    );
}

#[test]
fn criterion_2_phase_identities() {
    let start = std::time::Instant::now();
    let traj = generate_cones(8, 2, 256, 1.18e-3, 6.0, 16).unwrap();
    let shape = [16, 16, 16];
    let img = rand_volume(shape, 21);
    let zero = FieldMap::zeros(shape).unwrap();

    let base = forward_exact(&img, &zero, &traj).unwrap();
    let f = 337.5;
    let round = demodulate_global(&add_global_offres(&base, &traj, f).unwrap(), &traj, f).unwrap();
    let round_err = round.rel_l2_error(&base).unwrap();

    let constant = FieldMap::constant(shape, f).unwrap();
    let direct = forward_exact(&img, &constant, &traj).unwrap();
    let factored = add_global_offres(&base, &traj, f).unwrap();
    let fact_err = direct.rel_l2_error(&factored).unwrap();

    let elapsed = start.elapsed();
    report(
        "criterion 2 (phase identities)",
        round_err <= 1e-12 && fact_err <= 1e-10 && elapsed.as_secs() < 5,
        format!(
            "demodulate(add(s)) rel {round_err:.2e} (<= 1e-12), factorization rel {fact_err:.2e} (<= 1e-10), {elapsed:.2?} (< 5 s)"
        ),
    );
}

#[test]
fn criterion_3_frequency_segmentation_convergence() {
    let start = std::time::Instant::now();
    let shape = [16, 16, 16];
    let traj = generate_cones(16, 2, 384, 0.8e-3, 8.0, 16).unwrap();
    let img = gen_vessel_phantom(shape, 2, 31).unwrap();
    let fmap = gen_field_map(shape, 60.0, 3, 32).unwrap();
    let exact = forward_exact(&img, &fmap, &traj).unwrap();

    let mut errors = Vec::new();
    for bins in [2usize, 4, 8, 16] {
        let fast = forward_freq_segmented(&img, &fmap, &traj, bins).unwrap();
        errors.push(fast.rel_l2_error(&exact).unwrap());
    }
    let strictly_decreasing = errors.windows(2).all(|w| w[1] < w[0]);
    let last = *errors.last().unwrap();
    let elapsed = start.elapsed();
    report(
        "criterion 3 (frequency segmentation convergence)",
        strictly_decreasing && last < 1e-2 && elapsed.as_secs() < 60,
        format!("errors over bins 2/4/8/16: {errors:?}, final < 1e-2, strictly decreasing, {elapsed:.2?} (< 60 s)"),
    );
}

#[test]
fn criterion_4_psf_monotonicity() {
    let start = std::time::Instant::now();
    let shape = [32, 32, 32];
    let center = [16, 16, 16];
    // Many interleaves with modest radial counts: the outer k-shell needs
    // ray density far more than radial oversampling.
    let base =
        refine_dcf_pipemenon(&generate_cones(96, 12, 160, 1.18e-3, 4.0, 32).unwrap(), 10, 3.0)
            .unwrap();

    let t_factors = [1.0, 2.0, 3.0];
    let freqs = [0.0, 300.0, 600.0];
    let mut radii = [[0.0f64; 3]; 3];
    for (ti, &tf) in t_factors.iter().enumerate() {
        let traj = scale_readout(&base, tf).unwrap();
        for (fi, &f0) in freqs.iter().enumerate() {
            let psf = psf_local(&traj, center, f0, shape).unwrap();
            radii[ti][fi] = energy_radius(&psf, center, 0.9);
        }
    }
    let mut monotone = true;
    for ti in 0..3 {
        for fi in 1..3 {
            monotone &= radii[ti][fi] >= radii[ti][fi - 1];
        }
    }
    for fi in 0..3 {
        for ti in 1..3 {
            monotone &= radii[ti][fi] >= radii[ti - 1][fi];
        }
    }
    let elapsed = start.elapsed();
    report(
        "criterion 4 (psf 90%-energy radius monotonicity)",
        monotone && elapsed.as_secs() < 300,
        format!("radii (rows T x1/x2/x3, cols f0 0/300/600 Hz): {radii:?}, {elapsed:.2?} (< 5 min)"),
    );
}

#[test]
fn criterion_5_autofocus_recovery() {
    let start = std::time::Instant::now();
    let shape = [32, 32, 32];
    let traj =
        refine_dcf_pipemenon(&generate_cones(96, 12, 160, 1.18e-3, 4.0, 32).unwrap(), 10, 3.0)
            .unwrap();
    let phantom = gen_vessel_phantom(shape, 3, 41).unwrap();
    let ks = grid_forward(&phantom, &traj, &GridParams::default()).unwrap();

    let cfg = AutofocusConfig::default(); // +-1 kHz, 41 candidates
    let spacing = (cfg.f_max_hz - cfg.f_min_hz) / (cfg.n_freqs - 1) as f64;
    let reference = grid_adjoint(&ks, &traj, shape, &cfg.grid).unwrap();

    let mut all_ok = true;
    let mut lines = Vec::new();
    for f0 in [-400.0, -200.0, 0.0, 200.0, 400.0] {
        let blurred = add_global_offres(&ks, &traj, f0).unwrap();
        let (corrected, fmap) = autofocus_correct(&blurred, &traj, shape, &cfg).unwrap();
        let med = median_over_signal(&fmap, &reference, cfg.mask_rel_threshold);
        let med_ok = (med - f0).abs() <= spacing;
        let mut err_ok = true;
        let mut detail = format!("f0 {f0:+.0}: median {med:+.0}");
        if f0 != 0.0 {
            let uncorrected = grid_adjoint(&blurred, &traj, shape, &cfg.grid).unwrap();
            let e_corr = nrmse(&corrected, &reference).unwrap();
            let e_unc = nrmse(&uncorrected, &reference).unwrap();
            err_ok = e_corr < e_unc;
            detail.push_str(&format!(", nrmse {e_corr:.3} vs uncorrected {e_unc:.3}"));
        }
        all_ok &= med_ok && err_ok;
        lines.push(detail);
    }
    let elapsed = start.elapsed();
    report(
        "criterion 5 (autofocus recovery)",
        all_ok && elapsed.as_secs() < 600,
        format!("{}; {elapsed:.2?} (< 10 min)", lines.join("; ")),
    );
}

#[test]
fn criterion_6_network_gradient_check() {
    let start = std::time::Instant::now();
    let cfg = NetConfig {
        n_res_blocks: 1,
        channels: 4,
        kernel: 3,
        global_skip: true,
        learning_rate: 1e-3,
        patch: 8,
        patch_stride: 8,
        batch: 1,
        seed: 42,
    };
    let params: NetParams<f64> = net_init(&cfg).unwrap();
    let x = rand_volume([8, 8, 8], 1001);
    let target = rand_volume([8, 8, 8], 1002);

    let pred = net_forward(&params, &x).unwrap();
    let min_resid = pred
        .data
        .iter()
        .zip(&target.data)
        .flat_map(|(p, t)| [(p.re - t.re).abs(), (p.im - t.im).abs()])
        .fold(f64::INFINITY, f64::min);
    assert!(min_resid > 1e-6, "fixture sits on an L1 kink");

    let (_, grads) = net_backward(&params, &x, &target).unwrap();
    let loss_of = |p: &NetParams<f64>| loss_l1(&net_forward(p, &x).unwrap(), &target).unwrap();

    let h = 1e-6;
    let mut max_rel = 0.0f64;
    let mut checked = 0usize;
    for li in 0..params.layers.len() {
        for wi in 0..params.layers[li].w.len() {
            let mut plus = params.clone();
            plus.layers[li].w[wi] += h;
            let mut minus = params.clone();
            minus.layers[li].w[wi] -= h;
            let fd = (loss_of(&plus) - loss_of(&minus)) / (2.0 * h);
            let an = grads[li].w[wi];
            let denom = fd.abs().max(an.abs());
            if denom < 1e-5 {
                continue; // finite-difference noise floor
            }
            max_rel = max_rel.max((fd - an).abs() / denom);
            checked += 1;
        }
    }
    let elapsed = start.elapsed();
    report(
        "criterion 6 (network gradient check)",
        max_rel < 1e-4 && checked > 1000 && elapsed.as_secs() < 120,
        format!("max relative error {max_rel:.2e} (< 1e-4) over {checked} parameters, {elapsed:.2?} (< 2 min)"),
    );
}

/// Shared setup for criteria 7 and 8: the trained desk-scale corrector.
struct TrainedPipeline {
    traj_short: ConesTrajectory,
    params: NetParams<f32>,
    test_phantoms: Vec<ComplexVolume>,
    grid: GridParams,
    shape: [usize; 3],
}

fn train_desk_pipeline() -> TrainedPipeline {
    let n = 20usize;
    let shape = [n, n, n];
    let grid = GridParams::default();
    let traj_short =
        refine_dcf_pipemenon(&generate_cones(20, 2, 512, 1.18e-3, 9.0, n).unwrap(), 10, 3.0)
            .unwrap();

    // Methods-B-style augmentation: four readout durations (the shortest
    // kept at the acquisition readout so the evaluation sweep is
    // in-distribution), 11 global frequencies spanning +-500 Hz.
    let corpus = CorpusParams {
        n_phantoms: 6,
        n_vessels: 3,
        scale_factors: vec![1.0, 1.5, 2.0, 2.5],
        freqs_hz: dataset::uniform_freqs(11, 500.0),
        seed: 2026,
        use_field_maps: false,
        fieldmap_f_max_hz: 300.0,
        n_bins: 1,
        grid,
    };
    let dir = std::env::temp_dir().join("offres-acceptance-corpus");
    let _ = std::fs::remove_dir_all(&dir);
    let manifest = dataset::build_corpus(&traj_short, &corpus, &dir).unwrap();
    assert!(manifest.entries.len() >= 200, "corpus has {} pairs", manifest.entries.len());
    let (train_manifest, test_manifest) = dataset::split(&manifest, 4.0 / 6.0, 1).unwrap();
    eprintln!(
        "corpus ready: {} train / {} test pairs",
        train_manifest.entries.len(),
        test_manifest.entries.len()
    );

    let train_pairs = dataset::load_pairs(&dir, &train_manifest).unwrap();
    // Validation on a slice of the held-out pairs keeps epochs affordable.
    let val_pairs: Vec<_> = dataset::load_pairs(&dir, &test_manifest)
        .unwrap()
        .into_iter()
        .step_by(4)
        .collect();

    let cfg = NetConfig {
        n_res_blocks: 3,
        channels: 32,
        kernel: 5,
        global_skip: true,
        learning_rate: 1e-4,
        patch: n,
        patch_stride: n,
        batch: 2,
        seed: 7,
    };
    struct Progress;
    impl offres_core::network::TrainObserver<f32> for Progress {
        fn on_epoch(
            &mut self,
            stats: &offres_core::network::EpochStats,
            _state: &offres_core::network::NetState<f32>,
        ) -> offres_core::Result<()> {
            eprintln!(
                "epoch {}: train L1 {:.6}, val L1 {:.6}",
                stats.epoch, stats.train_l1, stats.val_l1
            );
            Ok(())
        }
    }
    let (state, history) = train::<f32>(&cfg, &train_pairs, &val_pairs, 4, &mut Progress).unwrap();
    assert!(history.len() >= 4);

    let mut test_ids: Vec<usize> = test_manifest.entries.iter().map(|e| e.phantom_id).collect();
    test_ids.sort_unstable();
    test_ids.dedup();
    let test_phantoms = test_ids
        .iter()
        .map(|&p| {
            gen_vessel_phantom(shape, corpus.n_vessels, corpus.seed.wrapping_add(1000 * p as u64))
                .unwrap()
        })
        .collect();
    TrainedPipeline { traj_short, params: state.params, test_phantoms, grid, shape }
}

#[test]
#[ignore = "trains the corrector at desk scale (about an hour); run nightly with -- --ignored"]
fn criterion_7_and_8_trained_corrector() {
    let start = std::time::Instant::now();
    let pipe = train_desk_pipeline();
    eprintln!("training done after {:.1?}", start.elapsed());

    // Criterion 7: sweep +-500 Hz on held-out phantoms; the corrected
    // curves must dominate the uncorrected ones at every grid point with
    // |f| >= 100 Hz.
    let freqs = dataset::uniform_freqs(11, 500.0);
    let tile = pipe.shape[0];
    let mut rows: Vec<(f64, f64, f64, f64, f64)> = Vec::new(); // f, nrmse_unc, nrmse_net, ssim_unc, ssim_net
    for &f in &freqs {
        let mut acc = (0.0, 0.0, 0.0, 0.0);
        for phantom in &pipe.test_phantoms {
            let ks = grid_forward(phantom, &pipe.traj_short, &pipe.grid).unwrap();
            let reference = grid_adjoint(&ks, &pipe.traj_short, pipe.shape, &pipe.grid).unwrap();
            let blurred = add_global_offres(&ks, &pipe.traj_short, f).unwrap();
            let uncorrected =
                grid_adjoint(&blurred, &pipe.traj_short, pipe.shape, &pipe.grid).unwrap();
            let corrected = apply(&pipe.params, &uncorrected, tile, 8).unwrap();
            acc.0 += nrmse(&uncorrected, &reference).unwrap();
            acc.1 += nrmse(&corrected, &reference).unwrap();
            acc.2 += ssim(&uncorrected, &reference).unwrap();
            acc.3 += ssim(&corrected, &reference).unwrap();
        }
        let m = pipe.test_phantoms.len() as f64;
        rows.push((f, acc.0 / m, acc.1 / m, acc.2 / m, acc.3 / m));
    }
    let mut dominated = true;
    for &(f, nrmse_unc, nrmse_net, ssim_unc, ssim_net) in &rows {
        eprintln!(
            "f {f:+5.0} Hz: nrmse {nrmse_unc:.4} -> {nrmse_net:.4}, ssim {ssim_unc:.4} -> {ssim_net:.4}"
        );
        if f.abs() >= 100.0 {
            dominated &= nrmse_net < nrmse_unc && ssim_net > ssim_unc;
        }
    }
    report(
        "criterion 7 (corrected curves dominate at |f| >= 100 Hz)",
        dominated,
        format!("{} sweep points on {} held-out phantoms", rows.len(), pipe.test_phantoms.len()),
    );

    // Criterion 8: iterated application on a strongly blurred held-out
    // image; later diffs must stay within 10% of the first.
    let phantom = &pipe.test_phantoms[0];
    let ks = grid_forward(phantom, &pipe.traj_short, &pipe.grid).unwrap();
    let traj_long = scale_readout(&pipe.traj_short, 2.5).unwrap();
    let ks_long =
        regrid_to_trajectory(&ks, &pipe.traj_short, &traj_long, pipe.shape, &pipe.grid).unwrap();
    let blurred_ks = add_global_offres(&ks_long, &traj_long, 400.0).unwrap();
    let input = grid_adjoint(&blurred_ks, &traj_long, pipe.shape, &pipe.grid).unwrap();
    let reportd = iterate_apply(&pipe.params, &input, 4).unwrap();
    let worst = reportd.ratios[1..].iter().cloned().fold(0.0, f64::max);
    report(
        "criterion 8 (iterated application is stable)",
        worst <= 0.10,
        format!("diff ratios {:?} (max after first {:.3} <= 0.10)", reportd.ratios, worst),
    );
    eprintln!("criteria 7+8 total {:.1?}", start.elapsed());
}

#[test]
fn criterion_9_determinism() {
    let traj = generate_cones(8, 2, 256, 1.0e-3, 6.0, 16).unwrap();
    let corpus = CorpusParams {
        n_phantoms: 2,
        n_vessels: 2,
        scale_factors: vec![1.0, 2.0],
        freqs_hz: dataset::uniform_freqs(3, 500.0),
        seed: 99,
        use_field_maps: false,
        fieldmap_f_max_hz: 300.0,
        n_bins: 1,
        grid: GridParams::default(),
    };
    let dir_a = std::env::temp_dir().join("offres-acceptance-det-a");
    let dir_b = std::env::temp_dir().join("offres-acceptance-det-b");
    let _ = std::fs::remove_dir_all(&dir_a);
    let _ = std::fs::remove_dir_all(&dir_b);
    let ma = dataset::build_corpus(&traj, &corpus, &dir_a).unwrap();
    let mb = dataset::build_corpus(&traj, &corpus, &dir_b).unwrap();
    let bytes_a = std::fs::read(dir_a.join("manifest.json")).unwrap();
    let bytes_b = std::fs::read(dir_b.join("manifest.json")).unwrap();
    let manifests_identical = bytes_a == bytes_b;
    let mut volumes_identical = true;
    for e in &ma.entries {
        let a = std::fs::read(dir_a.join(format!("{}.cfl", e.input_path))).unwrap();
        let b = std::fs::read(dir_b.join(format!("{}.cfl", e.input_path))).unwrap();
        volumes_identical &= a == b;
    }

    // Loss-history reproducibility for a fixed seed.
    let cfg = NetConfig {
        n_res_blocks: 1,
        channels: 6,
        kernel: 3,
        global_skip: true,
        learning_rate: 1e-3,
        patch: 16,
        patch_stride: 16,
        batch: 2,
        seed: 5,
    };
    let pairs = dataset::load_pairs(&dir_a, &ma).unwrap();
    let val = vec![pairs[0].clone()];
    let (_, h1) = train::<f32>(&cfg, &pairs, &val, 2, &mut NoopObserver).unwrap();
    let (_, h2) = train::<f32>(&cfg, &pairs, &val, 2, &mut NoopObserver).unwrap();
    let mut history_close = h1.len() == h2.len();
    for (a, b) in h1.iter().zip(&h2) {
        history_close &= (a.train_l1 - b.train_l1).abs() <= 1e-10
            && (a.val_l1 - b.val_l1).abs() <= 1e-10;
    }
    report(
        "criterion 9 (determinism)",
        manifests_identical && volumes_identical && history_close,
        format!(
            "manifests identical: {manifests_identical}, volumes identical: {volumes_identical}, loss history within 1e-10: {history_close}"
        ),
    );
    let _ = mb;
}
