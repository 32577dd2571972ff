//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Run with `cargo test -p mampc-cli --test acceptance`.

use std::path::Path;
use std::time::{Duration, Instant};

use mampc_cli::artifacts::MetricsRow;
use mampc_cli::pipeline::{self, RunVariant};
use mampc_cli::{ExperimentConfig, PlantKind};
use mampc_core::exec::Execution;
use mampc_core::mampc::{mampc_step, mpc_step, solve_p0_brute_force, PastInputs};
use mampc_core::plants::{activation_loss_branches, SofcParams};
use mampc_core::qp::{kkt_residual, qp_solve, QpProblem, QpStatus};
use mampc_core::sysid::{detrend, simulation_fit, subspace_identify};
use mampc_core::{best_s_sparse, simulate, HorizonConfig, LtiModel, PlantModel, QuadrupleTank};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

struct Criterion {
    id: usize,
    name: &'static str,
    limit: Option<Duration>,
    check: fn() -> Outcome,
}

fn main() {
    let criteria = [
        Criterion { id: 1, name: "tank steady state", limit: Some(Duration::from_secs(10)), check: tank_steady_state },
        Criterion { id: 2, name: "best s-sparse approximation", limit: Some(Duration::from_secs(5)), check: sparse_projection },
        Criterion { id: 3, name: "QP correctness", limit: Some(Duration::from_secs(30)), check: qp_correctness },
        Criterion { id: 4, name: "alternating descent", limit: None, check: alternating_descent },
        Criterion { id: 5, name: "degenerate equivalence", limit: None, check: degenerate_equivalence },
        Criterion { id: 6, name: "P1 <= P0 on toy instances", limit: None, check: relaxation_bound },
        Criterion { id: 7, name: "tank trend", limit: Some(Duration::from_secs(120)), check: tank_trend },
        Criterion { id: 8, name: "SOFC trend", limit: Some(Duration::from_secs(300)), check: sofc_trend },
        Criterion { id: 9, name: "identification round trip", limit: None, check: identification_round_trip },
        Criterion { id: 10, name: "activation-loss continuity", limit: None, check: activation_continuity },
        Criterion { id: 11, name: "determinism", limit: None, check: determinism },
    ];

    let mut failed = 0;
    for c in &criteria {
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(c.check).unwrap_or_else(|_| Err("panicked".into()));
        let elapsed = start.elapsed();
        let outcome = match (outcome, c.limit) {
            (Ok(_), Some(limit)) if elapsed > limit => {
                Err(format!("took {:.1} s, limit {} s", elapsed.as_secs_f64(), limit.as_secs()))
            }
            (o, _) => o,
        };
        let (status, detail) = match &outcome {
            Ok(d) => ("PASS", d),
            Err(d) => ("FAIL", d),
        };
        if outcome.is_err() {
            failed += 1;
        }
        println!("{status} [{:>2}] {} ({:.2} s): {detail}", c.id, c.name, elapsed.as_secs_f64());
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn tank_steady_state() -> Outcome {
    let plant = QuadrupleTank::nominal();
    let u = DVector::from_vec(vec![50.0, 50.0]);
    let mut x = DVector::from_vec(vec![1.0, 1.0, 1.0, 1.0]);
    for _ in 0..400 {
        x = plant.advance(&x, &u, 25.0).map_err(|e| e.to_string())?;
    }
    let target = [16.3, 13.7, 6.0, 8.1];
    let err = (0..4).map(|i| (x[i] - target[i]).abs()).fold(0.0, f64::max);
    ensure(err <= 0.1, || format!("levels {:?}, max error {err:.3} cm", x.as_slice()))?;
    Ok(format!("levels {:.3?} after 10000 s, max error {err:.4} cm", x.as_slice()))
}

fn sparse_projection() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for trial in 0..200 {
        let d = rng.gen_range(1..=12);
        let s = rng.gen_range(0..=d);
        let w = DVector::from_fn(d, |_, _| rng.gen_range(-5.0..5.0));
        let got = best_s_sparse(&w, s);
        // exhaustive: keep the support with the largest retained energy
        let mut best: Option<(f64, u32)> = None;
        for mask in 0u32..(1 << d) {
            if mask.count_ones() as usize != s {
                continue;
            }
            let err: f64 = (0..d).filter(|i| mask & (1 << i) == 0).map(|i| w[i] * w[i]).sum();
            if best.is_none_or(|(e, _)| err < e) {
                best = Some((err, mask));
            }
        }
        let (_, mask) = best.expect("some support");
        let want = DVector::from_fn(d, |i, _| if mask & (1 << i) != 0 { w[i] } else { 0.0 });
        ensure(got == want, || format!("trial {trial}: d={d} s={s}\n got {got}\n want {want}"))?;
    }
    Ok("200 random vectors match enumeration exactly".into())
}

fn random_spd(rng: &mut ChaCha8Rng, d: usize) -> DMatrix<f64> {
    let m = DMatrix::from_fn(d, d, |_, _| rng.gen_range(-1.0..1.0));
    &m.transpose() * &m + DMatrix::identity(d, d) * 0.2
}

/// Accelerated projected gradient on a box.
fn projected_gradient(h: &DMatrix<f64>, f: &DVector<f64>, lo: &DVector<f64>, hi: &DVector<f64>) -> DVector<f64> {
    let l = h.clone().symmetric_eigenvalues().max();
    let project = |v: DVector<f64>| DVector::from_fn(v.len(), |i, _| v[i].clamp(lo[i], hi[i]));
    let mut x = project(DVector::zeros(f.len()));
    let mut y = x.clone();
    let mut t = 1.0f64;
    for _ in 0..200_000 {
        let x_next = project(&y - (h * &y + f) / l);
        let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
        let step = (&x_next - &x).amax();
        y = &x_next + (&x_next - &x) * ((t - 1.0) / t_next);
        x = x_next;
        t = t_next;
        if step < 1e-15 {
            break;
        }
    }
    x
}

fn qp_correctness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut worst_kkt, mut worst_gap) = (0.0f64, 0.0f64);
    for trial in 0..50 {
        let d = rng.gen_range(2..=10);
        let h = random_spd(&mut rng, d);
        let f = DVector::from_fn(d, |_, _| rng.gen_range(-5.0..5.0));
        let lo = DVector::from_fn(d, |_, _| rng.gen_range(-2.0..0.0));
        let hi = DVector::from_fn(d, |i, _| lo[i] + rng.gen_range(0.1..3.0));
        let mut a = DMatrix::zeros(2 * d, d);
        let mut b = DVector::zeros(2 * d);
        for i in 0..d {
            a[(i, i)] = 1.0;
            b[i] = hi[i];
            a[(d + i, i)] = -1.0;
            b[d + i] = -lo[i];
        }
        let p = QpProblem::new(h.clone(), f.clone(), a, b, DMatrix::zeros(0, d), DVector::zeros(0))
            .map_err(|e| e.to_string())?;
        let sol = qp_solve(&p, 1e-9, 50_000);
        ensure(sol.status == QpStatus::Optimal, || format!("trial {trial}: status {:?}", sol.status))?;
        let kkt = kkt_residual(&p, &sol.v, &sol.y_ineq, &sol.y_eq).max();
        let oracle = projected_gradient(&h, &f, &lo, &hi);
        let gap = (p.objective(&sol.v) - p.objective(&oracle)).abs();
        worst_kkt = worst_kkt.max(kkt);
        worst_gap = worst_gap.max(gap);
        ensure(kkt <= 1e-6 && gap <= 1e-6, || format!("trial {trial}: KKT {kkt:.2e}, objective gap {gap:.2e}"))?;
    }
    Ok(format!("50 QPs, worst KKT {worst_kkt:.2e}, worst objective gap {worst_gap:.2e}"))
}

fn scenario_out(name: &str) -> tempfile::TempDir {
    tempfile::Builder::new().prefix(name).tempdir().expect("temp dir")
}

struct Scenario {
    rows: Vec<MetricsRow>,
    max_ascent: f64,
}

fn run_scenario(cfg: &ExperimentConfig, out: &Path) -> Result<Scenario, String> {
    let outcomes = pipeline::cmd_sweep(cfg, out, Execution::Parallel).map_err(|e| e.to_string())?;
    Ok(Scenario {
        max_ascent: outcomes.iter().map(|o| o.run.max_ascent).fold(0.0, f64::max),
        rows: outcomes.into_iter().map(|o| o.metrics).collect(),
    })
}

fn alternating_descent() -> Outcome {
    let mut worst = 0.0f64;
    for kind in [PlantKind::Tank, PlantKind::Sofc] {
        let cfg = ExperimentConfig::defaults(kind);
        let dir = scenario_out("descent");
        let s = run_scenario(&cfg, dir.path())?;
        ensure(s.max_ascent <= 1e-9, || format!("{} scenario: objective rose by {:.3e}", kind.name(), s.max_ascent))?;
        worst = worst.max(s.max_ascent);
    }
    Ok(format!("tank and SOFC scenarios (n_s = 1, 3), largest rise {worst:.2e}"))
}

fn random_plant(rng: &mut ChaCha8Rng, n: usize, m: usize, l: usize) -> LtiModel {
    let raw = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
    let probe = LtiModel::new(raw.clone(), DMatrix::zeros(n, m), DMatrix::zeros(l, n), DMatrix::zeros(l, m), 1.0).unwrap();
    let radius = rng.gen_range(0.3..0.95);
    let a = raw * (radius / probe.spectral_radius().max(1e-3));
    let b = DMatrix::from_fn(n, m, |_, _| rng.gen_range(-1.0..1.0));
    let c = DMatrix::from_fn(l, n, |_, _| rng.gen_range(-1.0..1.0));
    LtiModel::new(a, b, c, DMatrix::zeros(l, m), 1.0).unwrap()
}

fn degenerate_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    for trial in 0..20 {
        let (n, m, l) = (rng.gen_range(1..=4), rng.gen_range(1..=2), rng.gen_range(1..=2));
        let model = random_plant(&mut rng, n, m, l);
        let x0 = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
        let r = DMatrix::from_fn(8, l, |_, _| rng.gen_range(-1.0..1.0));
        let history: Vec<DVector<f64>> = (0..2).map(|_| DVector::from_fn(m, |_, _| rng.gen_range(-0.5..0.5))).collect();
        let mut base = HorizonConfig::new(m, l);
        base.n_p = 8;
        base.n_c = 3;
        base.lambda = 0.5;
        base.mu = 1.0;
        base.u_min = DVector::from_element(m, -3.0);
        base.u_max = DVector::from_element(m, 3.0);
        base.eps1 = 1e-11;
        base.max_alt_iter = 10_000;
        base.qp_tol = 1e-10;

        let mut vacuous = base.clone();
        vacuous.n_s = 2;
        vacuous.s = vacuous.vacuous_sparsity(m);
        let mut unpenalized = base.clone();
        unpenalized.n_s = 0;
        unpenalized.mu = 0.0;
        unpenalized.s = 1;

        let u_mpc = mpc_step(&model, &base, &x0, &r, &history[1]).map_err(|e| e.to_string())?;
        for (case, cfg) in [("s vacuous", &vacuous), ("mu = 0, n_s = 0", &unpenalized)] {
            let past = PastInputs::from_history(&history, cfg.n_s).map_err(|e| e.to_string())?;
            let res = mampc_step(&model, cfg, &x0, &r, &past).map_err(|e| e.to_string())?;
            let diff = (&res.u_applied - &u_mpc).amax();
            worst = worst.max(diff);
            ensure(diff <= 1e-6, || {
                format!("plant {trial} ({case}): |u_mampc - u_mpc| = {diff:.2e} after {} iterations", res.alt_iterations)
            })?;
        }
    }
    Ok(format!("20 plants x 2 cases, largest input difference {worst:.2e}"))
}

fn relaxation_bound() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut instances = 0;
    let mut tightest = f64::INFINITY;
    for trial in 0..40 {
        let n = rng.gen_range(1..=3);
        let model = random_plant(&mut rng, n, 1, 1);
        let n_s = rng.gen_range(0..=1);
        let n_c = rng.gen_range(2..=4 - n_s);
        let mut cfg = HorizonConfig::new(1, 1);
        cfg.n_p = 6;
        cfg.n_c = n_c;
        cfg.n_s = n_s;
        cfg.s = rng.gen_range(1..=cfg.vacuous_sparsity(1));
        cfg.lambda = rng.gen_range(0.05..1.0);
        cfg.mu = rng.gen_range(0.5..20.0);
        cfg.u_min = DVector::from_element(1, -2.0);
        cfg.u_max = DVector::from_element(1, 2.0);
        cfg.qp_tol = 1e-10;
        let x0 = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
        let r = DMatrix::from_fn(6, 1, |_, _| rng.gen_range(-1.0..1.0));
        let history = vec![DVector::from_element(1, rng.gen_range(-0.5..0.5))];
        let past = PastInputs::from_history(&history, n_s).map_err(|e| e.to_string())?;
        let p0 = solve_p0_brute_force(&model, &cfg, &x0, &r, &past, Execution::Parallel).map_err(|e| e.to_string())?;
        let p1 = mampc_step(&model, &cfg, &x0, &r, &past).map_err(|e| e.to_string())?;
        let margin = p0.objective - p1.objective();
        tightest = tightest.min(margin);
        ensure(margin >= -1e-8, || {
            format!("instance {trial} (n_c={n_c}, n_s={n_s}, s={}): P0 {} < P1 {}", cfg.s, p0.objective, p1.objective())
        })?;
        instances += 1;
    }
    Ok(format!("{instances} instances, smallest P0 - P1 margin {tightest:.3e}"))
}

fn row<'a>(rows: &'a [MetricsRow], label: &str) -> Result<&'a MetricsRow, String> {
    rows.iter().find(|r| r.label == label).ok_or_else(|| format!("no {label} row"))
}

fn tank_trend() -> Outcome {
    let cfg = ExperimentConfig::defaults(PlantKind::Tank);
    ensure(
        (cfg.horizon.n_p, cfg.horizon.n_c, cfg.horizon.s, cfg.threshold) == (10, 5, 3, 0.1),
        || "tank defaults changed".into(),
    )?;
    let dir = scenario_out("tank");
    let s = run_scenario(&cfg, dir.path())?;
    let (mpc, ns1, ns3) = (row(&s.rows, "mpc")?, row(&s.rows, "mampc_ns1")?, row(&s.rows, "mampc_ns3")?);
    let ordered: Vec<usize> = (0..2)
        .filter(|&c| ns3.density[c] < ns1.density[c] && ns1.density[c] < mpc.density[c])
        .collect();
    ensure(!ordered.is_empty(), || {
        format!("densities mpc {:?}, ns1 {:?}, ns3 {:?}", mpc.density, ns1.density, ns3.density)
    })?;
    for r in [ns1, ns3] {
        ensure(r.error_dropped <= 3.0 * mpc.error_dropped, || {
            format!("{} tracking error {:.4e} > 3 x MPC {:.4e}", r.label, r.error_dropped, mpc.error_dropped)
        })?;
    }
    ensure(ns3.error_dropped < ns3.error, || {
        format!("dropping 15 steps did not reduce the n_s = 3 error ({:.4e} vs {:.4e})", ns3.error_dropped, ns3.error)
    })?;
    Ok(format!(
        "density u1/u2: mpc {:.3}/{:.3}, ns1 {:.3}/{:.3}, ns3 {:.3}/{:.3}; error (drop 15) mpc {:.3e}, ns1 {:.3e}, ns3 {:.3e}",
        mpc.density[0], mpc.density[1], ns1.density[0], ns1.density[1], ns3.density[0], ns3.density[1],
        mpc.error_dropped, ns1.error_dropped, ns3.error_dropped
    ))
}

fn sofc_trend() -> Outcome {
    let cfg = ExperimentConfig::defaults(PlantKind::Sofc);
    let dir = scenario_out("sofc");
    let s = run_scenario(&cfg, dir.path())?;
    let mpc = row(&s.rows, "mpc")?;
    for label in ["mampc_ns1", "mampc_ns3"] {
        let r = row(&s.rows, label)?;
        ensure(r.density.iter().zip(&mpc.density).all(|(a, b)| a <= b), || {
            format!("{label} densities {:?} exceed MPC {:?}", r.density, mpc.density)
        })?;
        ensure(r.error_dropped <= 3.0 * mpc.error_dropped, || {
            format!("{label} tracking error {:.4e} > 3 x MPC {:.4e}", r.error_dropped, mpc.error_dropped)
        })?;
    }
    let (ns1, ns3) = (row(&s.rows, "mampc_ns1")?, row(&s.rows, "mampc_ns3")?);
    Ok(format!(
        "density fuel/air: mpc {:.3}/{:.3}, ns1 {:.3}/{:.3}, ns3 {:.3}/{:.3}; error (drop 15) mpc {:.3e}, ns1 {:.3e}, ns3 {:.3e}",
        mpc.density[0], mpc.density[1], ns1.density[0], ns1.density[1], ns3.density[0], ns3.density[1],
        mpc.error_dropped, ns1.error_dropped, ns3.error_dropped
    ))
}

fn identification_round_trip() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (n, m, l) = (4, 2, 2);
    // well-separated real poles in a random, well-conditioned basis
    let poles = [0.85, 0.7, 0.5, 0.3];
    let t = DMatrix::identity(n, n) + DMatrix::from_fn(n, n, |_, _| rng.gen_range(-0.3..0.3));
    let t_inv = t.clone().try_inverse().ok_or("singular basis")?;
    let a = &t * DMatrix::from_diagonal(&DVector::from_column_slice(&poles)) * t_inv;
    let b = DMatrix::from_fn(n, m, |_, _| rng.gen_range(-1.0..1.0));
    let c = DMatrix::from_fn(l, n, |_, _| rng.gen_range(-1.0..1.0));
    let d = DMatrix::from_fn(l, m, |_, _| rng.gen_range(-0.5..0.5));
    let truth = LtiModel::new(a, b, c, d, 1.0).map_err(|e| e.to_string())?;

    let u = DMatrix::from_fn(1000, m, |_, _| rng.gen_range(-1.0..1.0));
    let x0 = DVector::from_fn(n, |_, _| rng.gen_range(-0.5..0.5));
    let y = simulate(&truth, &x0, &u).map_err(|e| e.to_string())?.outputs;
    let data = detrend(&u, &y, 1.0).map_err(|e| e.to_string())?;
    let id = subspace_identify(&data.slice(0, 700), None, None).map_err(|e| e.to_string())?;
    ensure(id.order == 4, || format!("selected order {}", id.order))?;

    let got = id.model.markov_parameters(20);
    let want = truth.markov_parameters(20);
    let err = got.iter().zip(&want).map(|(g, w)| (g - w).amax()).fold(0.0, f64::max);
    ensure(err <= 1e-6, || format!("Markov parameter error {err:.2e}"))?;
    let fit = simulation_fit(&id.model, &data.slice(700, 300)).map_err(|e| e.to_string())?;
    ensure(fit.iter().all(|v| *v >= 99.0), || format!("held-out fit {fit:?}"))?;
    Ok(format!("order 4 selected, Markov error {err:.2e}, held-out fit {:.4?} %", fit))
}

fn activation_continuity() -> Outcome {
    let p = SofcParams::default();
    let mut worst = 0.0f64;
    for k in 0..=400 {
        let t = 900.0 + k as f64;
        let (linear, log) = activation_loss_branches(p.exchange_current_density, t, &p);
        worst = worst.max((linear - log).abs());
    }
    ensure(worst <= 1e-12, || format!("jump {worst:.2e} V"))?;
    Ok(format!("largest jump at j = j_0 over 900..1300 K: {worst:.1e} V"))
}

fn csv_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap().flatten() {
            let path = entry.path();
            if path.is_dir() {
                stack.push(path);
            } else if path.extension().is_some_and(|e| e == "csv") {
                let rel = path.strip_prefix(dir).unwrap().display().to_string();
                out.push((rel, std::fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn determinism() -> Outcome {
    let mut files = 0;
    for kind in [PlantKind::Tank, PlantKind::Sofc] {
        let cfg = ExperimentConfig::defaults(kind);
        let first = scenario_out("first");
        run_scenario(&cfg, first.path())?;
        // rerun from the echoed configuration only
        let echoed = ExperimentConfig::load(&first.path().join(pipeline::CONFIG_FILE)).map_err(|e| e.to_string())?;
        let second = scenario_out("second");
        pipeline::cmd_simulate(&echoed, second.path()).map_err(|e| e.to_string())?;
        pipeline::cmd_identify(&echoed, second.path()).map_err(|e| e.to_string())?;
        for variant in [RunVariant::mpc(), RunVariant::mampc(1), RunVariant::mampc(3)] {
            pipeline::cmd_run(&echoed, second.path(), variant).map_err(|e| e.to_string())?;
        }
        let (a, b) = (csv_files(first.path()), csv_files(second.path()));
        ensure(a.len() == 6, || format!("expected 6 CSV files, found {}", a.len()))?;
        let names = |v: &[(String, Vec<u8>)]| v.iter().map(|(n, _)| n.clone()).collect::<Vec<_>>();
        ensure(names(&a) == names(&b), || format!("file sets differ: {:?} vs {:?}", names(&a), names(&b)))?;
        for ((name, x), (_, y)) in a.iter().zip(&b) {
            ensure(x == y, || format!("{} {name} differs between reruns", kind.name()))?;
        }
        files += a.len();
    }
    Ok(format!("{files} CSV files byte-identical across reruns from the echoed config"))
}
