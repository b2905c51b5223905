//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fails.
//!
//! Criteria 5 to 9 share one trained network and one run of each sweep on a
//! 16-participant cohort (8 train, 2 validation, 6 test).

use std::collections::BTreeMap;
use std::f64::consts::{PI, TAU};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wallqa::config::RunConfig;
use wallqa::phantom::{generate_cohort, CohortSpec, Ellipse, IntensityModel};
use wallqa::pipeline::{self, TrainSummary};
use wallqa::polar::{
    contours_to_cartesian, polar_transform, radii_from_polygon, ray_angle, ray_direction, ContourPair, PolarCenter,
    N_ANGLES, PATCH_SHAPE,
};
use wallqa::predictor::{grad_check, GradCheckConfig, Model};
use wallqa::qa::{dice, rasterize, CorrelationLevel, EnsembleMethod, Mask, Method, Structure, Window};
use wallqa::sim::{segment_cohort, Experiment, SweepReport};
use wallqa::stats::{median, spearman};
use wallqa::uncertainty::{
    aggregate_polar, polar_fit, ContourEnsemble, EnsembleConfig, Member, MemberSource, POLAR_RIDGE,
    WINDOW_HALF_WIDTH,
};
use wallqa::volume::Volume;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

// ---------------------------------------------------------------- 1 to 3

fn geometry_round_trip() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let center = PolarCenter::new(rng.random_range(0.0..300.0), rng.random_range(0.0..150.0), 8);
        let radii: Vec<f64> = (0..N_ANGLES).map(|_| rng.random_range(0.5..30.0)).collect();
        let widths: Vec<f64> = (0..N_ANGLES).map(|_| rng.random_range(0.1..15.0)).collect();
        let c = ContourPair::new(center, radii, widths).unwrap();
        let (lumen, outer) = contours_to_cartesian(&c);
        let got_lumen = radii_from_polygon(center.xy(), &lumen);
        let got_outer = radii_from_polygon(center.xy(), &outer);
        for (a, b) in got_lumen.iter().zip(c.lumen_radii()).chain(got_outer.iter().zip(&c.outer_radii())) {
            worst = worst.max((a - b).abs());
        }
    }
    outcome(worst <= 1e-9, format!("max radius error {worst:.2e} over 1000 pairs (tol 1e-9)"))
}

fn polar_patch_fields() -> Outcome {
    let dims = [300, 300, 9];
    let field = |x: f64, y: f64, z: f64| 0.25 + 0.001 * x + 0.002 * y + 0.01 * z;
    let mut linear = Vec::with_capacity(dims.iter().product());
    for z in 0..dims[2] {
        for y in 0..dims[1] {
            for x in 0..dims[0] {
                linear.push(field(x as f64, y as f64, z as f64) as f32);
            }
        }
    }
    let n = linear.len();
    let constant = Volume::new(dims, [1.0; 3], vec![0.37; n]).unwrap();
    let linear = Volume::new(dims, [1.0; 3], linear).unwrap();
    let c = PolarCenter::new(150.3, 149.6, 4);
    let pc = polar_transform::<f64>(&constant, c).unwrap();
    let pl = polar_transform::<f64>(&linear, c).unwrap();
    let const_err = pc.samples().iter().map(|&v| (v - 0.37f32 as f64).abs()).fold(0.0, f64::max);
    let mut lin_err = 0.0f64;
    for a in 0..PATCH_SHAPE[0] {
        let [dx, dy] = ray_direction::<f64>(a);
        for k in 0..PATCH_SHAPE[1] {
            let r = (k + 1) as f64;
            for s in 0..PATCH_SHAPE[2] {
                let want = field(c.x + r * dx, c.y + r * dy, (c.z + s - 3) as f64);
                lin_err = lin_err.max((pl.get(a, k, s) - want).abs());
            }
        }
    }
    let pass = pc.shape() == [31, 127, 7] && pl.shape() == [31, 127, 7] && const_err <= 1e-6 && lin_err <= 1e-6;
    outcome(
        pass,
        format!("shape {:?}, constant error {const_err:.1e}, linear error {lin_err:.1e} (tol 1e-6)", pl.shape()),
    )
}

fn gradient_check() -> Outcome {
    let start = Instant::now();
    let report = grad_check(&GradCheckConfig::default());
    let elapsed = start.elapsed();
    match report {
        Ok(r) => outcome(
            r.max_rel_error < 1e-4 && elapsed < Duration::from_secs(10),
            format!(
                "max relative error {:.2e} over {} params ({} at ReLU kinks skipped), {:.2?} (tol 1e-4, 10 s)",
                r.max_rel_error, r.n_params, r.skipped, elapsed
            ),
        ),
        Err(e) => outcome(false, format!("gradient check failed: {e}")),
    }
}

// ---------------------------------------------------------------- 4

fn oracle_quality() -> Outcome {
    let start = Instant::now();
    let spec = CohortSpec {
        n_participants: 10,
        intensity: IntensityModel { texture_sigma: 0.0, ..IntensityModel::default() },
        ..CohortSpec::default()
    };
    let cohort = generate_cohort(&spec).unwrap();
    let (records, _) =
        segment_cohort(&cohort, &Model::Oracle(spec.intensity), &[Method::SINGLE], &EnsembleConfig::default()).unwrap();
    let of = |s: Structure| median(&records.iter().filter(|r| r.structure == s).map(|r| r.dice).collect::<Vec<_>>());
    let (lumen, wall) = (of(Structure::Lumen), of(Structure::Wall));
    let elapsed = start.elapsed();
    outcome(
        lumen >= 0.95 && wall >= 0.90 && elapsed < Duration::from_secs(60),
        format!(
            "median Dice lumen {lumen:.4}, wall {wall:.4} on {} contours, {elapsed:.2?} (need 0.95, 0.90, 60 s)",
            records.len()
        ),
    )
}

// ---------------------------------------------------------------- shared run for 5 to 9

struct Trained {
    summary: TrainSummary,
    train_time: Duration,
    noise: SweepReport,
    offset: SweepReport,
    _dir: tempfile::TempDir,
}

fn trained_run() -> Trained {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig::default();
    cfg.output_dir = dir.path().to_path_buf();
    cfg.offset_sweep.levels = (0..10).map(|k| k as f64 / 10.0).collect();
    cfg.validate().unwrap();
    eprintln!("acceptance: generating cohort and training (several minutes on one core)");
    pipeline::gen_phantoms(&cfg).unwrap();
    let start = Instant::now();
    let (_, summary) = pipeline::train_model(&cfg).unwrap();
    let train_time = start.elapsed();
    eprintln!("acceptance: trained in {train_time:.0?}, running sweeps");
    let noise = pipeline::sweep(&cfg, Experiment::Noise).unwrap();
    let offset = pipeline::sweep(&cfg, Experiment::Offset).unwrap();
    Trained { summary, train_time, noise, offset, _dir: dir }
}

fn trained_cnn(t: &Trained) -> Outcome {
    let s = &t.summary;
    let pass = s.validation_median_lumen_dice >= 0.85
        && s.epochs_run <= 50
        && s.n_train_samples + s.n_validation_samples <= 2000
        && t.train_time < Duration::from_secs(15 * 60);
    outcome(
        pass,
        format!(
            "validation median lumen Dice {:.4} (wall {:.4}), {} epochs (best {}), {} + {} patches, {:.0?} (need 0.85, at most 50 epochs, 2000 patches, 15 min)",
            s.validation_median_lumen_dice,
            s.validation_median_wall_dice,
            s.epochs_run,
            s.best_epoch,
            s.n_train_samples,
            s.n_validation_samples,
            t.train_time
        ),
    )
}

fn non_degradation(t: &Trained) -> Outcome {
    let records = &t.noise.levels[0].records;
    let mean = |m: Method, s: Structure| {
        let v: Vec<f64> = records.iter().filter(|r| r.method() == m && r.structure == s).map(|r| r.dice).collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    let mut pass = true;
    let mut parts = Vec::new();
    for s in Structure::ALL {
        let base = mean(Method::SINGLE, s);
        let dm = mean(Method::DROPOUT_MEAN, s);
        let dp = mean(Method::DROPOUT_POLAR, s);
        pass &= dm >= base - 0.01 && dp >= base - 0.01;
        parts.push(format!("{s}: single {base:.4}, dropout_mean {dm:.4}, dropout_polar {dp:.4}"));
    }
    outcome(pass, format!("{} (need >= single - 0.01)", parts.join("; ")))
}

fn trends(r: &SweepReport, s: Structure) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let rows = r.summary_for(s, Method::DROPOUT_POLAR);
    (
        rows.iter().map(|r| r.level).collect(),
        rows.iter().map(|r| r.median_dice).collect(),
        rows.iter().map(|r| r.median_uncertainty).collect(),
    )
}

fn fmt(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>().join(" ")
}

fn noise_monotonicity(t: &Trained) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for s in Structure::ALL {
        let (levels, d, u) = trends(&t.noise, s);
        let (rd, ru) = (spearman(&levels, &d), spearman(&levels, &u));
        pass &= rd <= -0.8 && ru >= 0.8;
        parts.push(format!("{s}: rho(Dice) {rd:.2} [{}], rho(u) {ru:.2} [{}]", fmt(&d), fmt(&u)));
    }
    let levels = trends(&t.noise, Structure::Lumen).0;
    pass &= levels == [0.0, 0.1, 0.2, 0.3, 0.4, 0.5];
    outcome(pass, format!("{} (need <= -0.8, >= 0.8)", parts.join("; ")))
}

fn offset_behavior(t: &Trained) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for s in Structure::ALL {
        let (levels, d, u) = trends(&t.offset, s);
        let (rd, ru) = (spearman(&levels, &d), spearman(&levels, &u));
        let rises = d.windows(2).filter(|w| w[1] > w[0]).count();
        pass &= rd <= -0.8 && ru >= 0.8;
        parts.push(format!(
            "{s}: rho(Dice) {rd:.2} [{}] with {rises} step-wise rises, rho(u) {ru:.2} [{}]",
            fmt(&d),
            fmt(&u)
        ));
    }
    let all_below_one = t.offset.levels.iter().all(|l| l.level < 1.0 && !l.outside_lumen);
    pass &= all_below_one;
    outcome(pass, format!("{}; correlations over offsets < 1 only: {all_below_one} (need <= -0.8, >= 0.8)", parts.join("; ")))
}

fn level_ordering(t: &Trained) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, r) in [("noise", &t.noise), ("offset", &t.offset)] {
        for s in Structure::ALL {
            let r2 = |l| r.correlation(l, s, Method::DROPOUT_POLAR).map_or(f64::NAN, |c| c.r_squared);
            let (c, v, p) =
                (r2(CorrelationLevel::Contour), r2(CorrelationLevel::Vessel), r2(CorrelationLevel::Participant));
            pass &= p >= v && v >= c - 0.05;
            parts.push(format!("{name} {s}: participant {p:.3}, vessel {v:.3}, contour {c:.3}"));
        }
    }
    outcome(pass, format!("{} (need participant >= vessel >= contour - 0.05)", parts.join("; ")))
}

// ---------------------------------------------------------------- 10

/// Dense normal equations `(AᵀA + λI) c = Aᵀy`, solved by Gaussian elimination with partial pivoting.
fn normal_equations(points: &[(f64, f64)], lambda: f64) -> [f64; 5] {
    let basis = |t: f64| [1.0, t.sin(), t.cos(), t.sin() * t.cos(), t.sin() * t.sin()];
    let mut m = [[0.0f64; 6]; 5];
    for &(t, d) in points {
        let b = basis(t);
        for i in 0..5 {
            for j in 0..5 {
                m[i][j] += b[i] * b[j];
            }
            m[i][5] += b[i] * d;
        }
    }
    for (i, row) in m.iter_mut().enumerate() {
        row[i] += lambda;
    }
    for k in 0..5 {
        let p = (k..5).max_by(|&a, &b| m[a][k].abs().total_cmp(&m[b][k].abs())).unwrap();
        m.swap(k, p);
        for i in k + 1..5 {
            let f = m[i][k] / m[k][k];
            for j in k..6 {
                m[i][j] -= f * m[k][j];
            }
        }
    }
    let mut c = [0.0; 5];
    for i in (0..5).rev() {
        c[i] = (m[i][5] - (i + 1..5).map(|j| m[i][j] * c[j]).sum::<f64>()) / m[i][i];
    }
    c
}

/// Fused distances and normalized uncertainties computed from scratch.
fn oracle_fusion(members: &[ContourPair<f64>], reference: [f64; 2], wall: bool) -> ([f64; 5], Vec<f64>, Vec<f64>) {
    let mut points = Vec::new();
    for m in members {
        let d = if wall { m.outer_radii() } else { m.lumen_radii().to_vec() };
        let [cx, cy] = m.center().xy();
        for (i, r) in d.iter().enumerate() {
            let t = TAU * i as f64 / 31.0;
            let (x, y) = (cx + r * t.cos() - reference[0], cy + r * t.sin() - reference[1]);
            points.push((y.atan2(x).rem_euclid(TAU), x.hypot(y)));
        }
    }
    let c = normal_equations(&points, POLAR_RIDGE);
    let eval = |t: f64| c[0] + c[1] * t.sin() + c[2] * t.cos() + c[3] * t.sin() * t.cos() + c[4] * t.sin() * t.sin();
    let dist: Vec<f64> = (0..31).map(|i| eval(TAU * i as f64 / 31.0)).collect();
    let raw: Vec<Option<f64>> = (0..31)
        .map(|i| {
            let ti = TAU * i as f64 / 31.0;
            let res: Vec<f64> = points
                .iter()
                .filter(|(t, _)| {
                    let g = (t - ti).rem_euclid(TAU);
                    g.min(TAU - g) <= PI / 32.0
                })
                .map(|&(t, d)| (d - eval(t)).abs())
                .collect();
            (!res.is_empty()).then(|| res.iter().sum::<f64>() / res.len() as f64)
        })
        .collect();
    let unc = (0..31)
        .map(|i| {
            let filled = (0..=15).find_map(|k| raw[(i + 31 - k) % 31].or(raw[(i + k) % 31])).unwrap();
            filled / dist[i]
        })
        .collect();
    (c, dist, unc)
}

fn random_ensemble(rng: &mut ChaCha8Rng) -> (ContourEnsemble<f64>, Vec<ContourPair<f64>>, PolarCenter<f64>) {
    let reference = PolarCenter::new(rng.random_range(40.0..60.0), rng.random_range(40.0..60.0), 5);
    let (a, b, phi) = (rng.random_range(5.0..9.0), rng.random_range(4.0..5.0), rng.random_range(0.0..PI));
    let n = rng.random_range(2..=20);
    let mut pairs = Vec::new();
    let mut members = Vec::new();
    for k in 0..n {
        let jitter = if rng.random_bool(0.5) { 0.0 } else { 1.0 };
        let center = reference.shifted(jitter * rng.random_range(-1.0..1.0), jitter * rng.random_range(-1.0..1.0));
        let ell = Ellipse { a, b, phi };
        let d = [center.x - reference.x, center.y - reference.y];
        let radii: Vec<f64> =
            (0..N_ANGLES).map(|i| ell.ray_distance(d, ray_angle(i)).unwrap() * rng.random_range(0.9..1.1)).collect();
        let widths: Vec<f64> = (0..N_ANGLES).map(|_| rng.random_range(2.0..4.0)).collect();
        let c = ContourPair::new(center, radii, widths).unwrap();
        pairs.push(c.clone());
        members.push(Member { source: MemberSource::Dropout { seed: k as u64 }, contour: c });
    }
    (ContourEnsemble::new(EnsembleMethod::Dropout, reference, members).unwrap(), pairs, reference)
}

fn aggregation_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let (mut coef_err, mut out_err, mut scale_err) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..100 {
        let (e, pairs, reference) = random_ensemble(&mut rng);
        for (wall, structure) in [(false, Structure::Lumen), (true, Structure::Wall)] {
            let (model, fused) = polar_fit(&e, reference, structure).unwrap();
            let (c, dist, unc) = oracle_fusion(&pairs, reference.xy(), wall);
            for (a, b) in model.coefficients.iter().zip(&c) {
                coef_err = coef_err.max((a - b).abs());
            }
            for (a, b) in fused.distances.iter().zip(&dist).chain(fused.uncertainties.iter().zip(&unc)) {
                out_err = out_err.max((a - b).abs());
            }
        }
        // scaling every distance about the common reference
        let s = rng.random_range(0.5..3.0);
        let scaled: Vec<Member<f64>> = e
            .members()
            .iter()
            .map(|m| {
                let c = &m.contour;
                let center = PolarCenter::new(
                    reference.x + s * (c.center().x - reference.x),
                    reference.y + s * (c.center().y - reference.y),
                    reference.z,
                );
                let radii = c.lumen_radii().iter().map(|r| r * s).collect();
                let widths = c.wall_widths().iter().map(|w| w * s).collect();
                Member { source: m.source, contour: ContourPair::new(center, radii, widths).unwrap() }
            })
            .collect();
        let e2 = ContourEnsemble::new(EnsembleMethod::Dropout, reference, scaled).unwrap();
        let (a, b) = (aggregate_polar(&e, reference).unwrap(), aggregate_polar(&e2, reference).unwrap());
        for st in Structure::ALL {
            for (u, v) in a.get(st).uncertainties.iter().zip(&b.get(st).uncertainties) {
                scale_err = scale_err.max((u - v).abs());
            }
        }
    }
    outcome(
        coef_err <= 1e-8 && out_err <= 1e-8 && scale_err <= 1e-9,
        format!(
            "coefficients {coef_err:.1e}, outputs {out_err:.1e} (tol 1e-8); scaling invariance {scale_err:.1e} (tol 1e-9); window half-width {WINDOW_HALF_WIDTH:.5}"
        ),
    )
}

// ---------------------------------------------------------------- 11

fn raster_and_dice() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let ell = Ellipse { a: rng.random_range(10.0..40.0), b: rng.random_range(10.0..40.0), phi: rng.random_range(0.0..PI) };
        let center = [rng.random_range(60.0..140.0), rng.random_range(60.0..140.0)];
        let mask = rasterize(&ell.polygon(center, 512), [200, 200]).unwrap();
        let r = ell.max_radius();
        let mut inside = 0usize;
        for _ in 0..1_000_000 {
            let d = [rng.random_range(-r..r), rng.random_range(-r..r)];
            inside += usize::from(ell.level(d) < 1.0);
        }
        let area = inside as f64 / 1e6 * 4.0 * r * r;
        worst = worst.max((mask.count() as f64 - area).abs() / area);
    }
    let window = Window { x0: 0, y0: 0, width: 24, height: 17 };
    let random_mask = |rng: &mut ChaCha8Rng| {
        let mut m = Mask::empty(window);
        let p = rng.random_range(0.05..0.95);
        for j in 0..window.height {
            for i in 0..window.width {
                m.set(i, j, rng.random_bool(p));
            }
        }
        m
    };
    let (mut symmetric, mut self_one) = (true, true);
    for _ in 0..1000 {
        let (a, b) = (random_mask(&mut rng), random_mask(&mut rng));
        symmetric &= dice(&a, &b).unwrap() == dice(&b, &a).unwrap();
        self_one &= dice(&a, &a).unwrap() == 1.0;
    }
    outcome(
        worst <= 0.02 && symmetric && self_one,
        format!("max area deviation {:.3}% on 50 ellipses (tol 2%); Dice symmetric {symmetric}, dice(A,A)=1 {self_one} on 1000 masks", 100.0 * worst),
    )
}

// ---------------------------------------------------------------- 12

fn files(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                out.insert(path.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&path).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

fn smoke_run(out: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/smoke.json");
    let mut cfg = RunConfig::load(path).unwrap();
    cfg.output_dir = out.to_path_buf();
    pipeline::gen_phantoms(&cfg).unwrap();
    pipeline::train_model(&cfg).unwrap();
    pipeline::segment(&cfg).unwrap();
    pipeline::correlate(&cfg).unwrap();
    pipeline::sweep(&cfg, Experiment::Noise).unwrap();
    pipeline::sweep(&cfg, Experiment::Offset).unwrap();
    pipeline::report(&cfg).unwrap();
    files(out)
}

fn determinism() -> Outcome {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let (fa, fb) = (smoke_run(a.path()), smoke_run(b.path()));
    let differing: Vec<String> = fa
        .keys()
        .chain(fb.keys())
        .filter(|k| fa.get(*k) != fb.get(*k))
        .map(|k| k.display().to_string())
        .collect();
    let checked = fa
        .keys()
        .filter(|k| matches!(k.extension().and_then(|e| e.to_str()), Some("csv" | "json" | "svg")))
        .count();
    outcome(
        differing.is_empty() && checked > 0,
        format!("{} artifacts ({checked} CSV/JSON/SVG) compared, differing: {differing:?}", fa.len()),
    )
}

fn main() -> ExitCode {
    // `cargo test -- <filter>` style arguments are accepted and ignored
    let mut results: Vec<(u32, &str, Outcome)> = Vec::new();
    let mut report = |n, name, o: Outcome| {
        println!("criterion {n:>2} {} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        results.push((n, name, o));
    };
    report(1, "geometry round trip", geometry_round_trip());
    report(2, "polar patch shape and fields", polar_patch_fields());
    report(3, "gradient check", gradient_check());
    report(4, "oracle quality", oracle_quality());
    report(10, "aggregation oracle", aggregation_oracle());
    report(11, "rasterization and Dice", raster_and_dice());
    report(12, "determinism", determinism());
    let t = trained_run();
    report(5, "trained CNN", trained_cnn(&t));
    report(6, "non-degradation by aggregation", non_degradation(&t));
    report(7, "noise monotonicity", noise_monotonicity(&t));
    report(8, "offset behavior", offset_behavior(&t));
    report(9, "level ordering", level_ordering(&t));
    let failed: Vec<u32> = results.iter().filter(|r| !r.2.pass).map(|r| r.0).collect();
    println!("{} of {} criteria passed", results.len() - failed.len(), results.len());
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        println!("failed: {failed:?}");
        ExitCode::FAILURE
    }
}
