//! End-to-end acceptance suite. Each test prints one PASS/FAIL line with the
//! observed values and asserts the pinned tolerance and runtime budget.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use lsc_core::cells::{
    cell_forward, jac_depth, jac_time, output_map, Activation, AlifVariant, CellKind, CellParams, CellSpec, CellState,
    Readout, StackConfig, TransitionPoint,
};
use lsc_core::cells::stack_forward;
use lsc_core::grid::{brute_force_paths, grid_jacobian, JacobianGrid};
use lsc_core::harness::{train_run, RunConfig};
use lsc_core::linalg::{InitScheme, Matrix, RandomSource};
use lsc_core::pretrain::{pretrain_run, GaussianBatches, GradMode, PretrainConfig};
use lsc_core::verify::{
    init_equivalence_check, kostlan_check, kostlan_predicted, kostlan_variance_check, pascal_bound_check,
    path_growth_check, psd_superadditivity_check, run_claim, Claim, Ensemble, FfnActivation, VerifyOptions,
};

fn verdict(n: usize, name: &str, pass: bool, detail: String, elapsed: Duration, limit: Duration) {
    let ok = pass && elapsed <= limit;
    println!(
        "criterion {n:>2} {:<4} {name}: {detail} [{:.2}s of {:.0}s]",
        if ok { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64(),
        limit.as_secs_f64()
    );
    assert!(pass, "criterion {n} ({name}) failed: {detail}");
    assert!(elapsed <= limit, "criterion {n} ({name}) exceeded its runtime budget");
}

const fn secs(s: u64) -> Duration {
    Duration::from_secs(s)
}

#[test]
fn c01_pascal_curves() {
    let start = Instant::now();
    let rng = RandomSource::new(0);
    let one = pascal_bound_check(10, 100, 1.0, &rng.fork(0)).unwrap();
    let half = pascal_bound_check(10, 100, 0.5, &rng.fork(1)).unwrap();
    verdict(
        1,
        "PascalRNN norm curves (L=10, T=100)",
        one.observed < 1e-6 && half.observed < 1e-9,
        format!("rho=1 binomial deviation {:.3e} (< 1e-6), rho=0.5 constant deviation {:.3e} (< 1e-9)", one.observed, half.observed),
        start.elapsed(),
        secs(10),
    );
}

#[test]
fn c02_grid_matches_brute_force() {
    let start = Instant::now();
    let kinds = [
        CellKind::Pascal { rho: 0.9 },
        CellKind::Simple { activation: Activation::Sigmoid },
        CellKind::Gru,
        CellKind::Lstm,
        CellKind::alif(AlifVariant::Plus),
    ];
    let mut rng = RandomSource::new(2);
    let mut worst = 0.0f64;
    let mut blocks = 0;
    for i in 0..50 {
        let kind = kinds[i % kinds.len()];
        let steps = 1 + rng.below(8);
        let depth = 1 + rng.below(4);
        let width = 1 + rng.below(3);
        let channels = if matches!(kind, CellKind::Pascal { .. }) { width } else { 1 + rng.below(3) };
        let stack = StackConfig::uniform(kind, depth, width, channels, Readout::Identity).unwrap();
        let params = stack.init_params(&rng.fork(i as u64)).unwrap();
        let x: Vec<Vec<f64>> = (0..steps).map(|_| (0..channels).map(|_| rng.normal()).collect()).collect();
        let run = stack_forward(&stack, &params, &x).unwrap();
        let grid = JacobianGrid::compute(&stack, &params, &run, false).unwrap();
        for t in 0..=steps {
            for l in 1..=depth {
                let a = grid_jacobian(&grid, t, l).unwrap();
                let b = brute_force_paths(&grid, t, l).unwrap();
                worst = worst.max(a.max_abs_diff(&b).unwrap());
                blocks += 1;
            }
        }
    }
    verdict(
        2,
        "grid recursion equals path enumeration",
        worst < 1e-10,
        format!("max abs deviation {worst:.3e} over {blocks} blocks of 50 runs (< 1e-10)"),
        start.elapsed(),
        secs(60),
    );
}

#[test]
fn c03_path_combinatorics() {
    let start = Instant::now();
    let reports = path_growth_check().unwrap();
    let failed: Vec<&str> = reports.iter().filter(|r| !r.pass).map(|r| r.claim.as_str()).collect();
    verdict(
        3,
        "path counts, total bound identity, growth regimes",
        failed.is_empty(),
        format!("{} checks, failing: {failed:?}", reports.len()),
        start.elapsed(),
        secs(5),
    );
}

#[test]
fn c04_kostlan() {
    let start = Instant::now();
    let rng = RandomSource::new(4);
    let reports = kostlan_check(8, 5000, Ensemble::Real, &rng.fork(0)).unwrap();
    let top = reports.last().unwrap();
    let var = kostlan_variance_check(&[4, 16, 64], 5000, &rng.fork(1)).unwrap();
    let predicted = kostlan_predicted(8, Ensemble::Real);
    verdict(
        4,
        "Kostlan law at n=8",
        (top.observed / predicted - 1.0).abs() <= 0.03 && var.pass,
        format!(
            "mean largest modulus {:.4} vs sqrt(2) G(4.5)/G(4) = {predicted:.4} ({:+.2}%, tol 3%); min p-value of a variance increase {:.3}",
            top.observed,
            100.0 * (top.observed / predicted - 1.0),
            var.observed
        ),
        start.elapsed(),
        secs(120),
    );
}

#[test]
fn c05_initialization_equivalence() {
    let start = Instant::now();
    let rng = RandomSource::new(5);
    let glorot = init_equivalence_check(InitScheme::GlorotUniform, 32, FfnActivation::Linear, 2000, &rng.fork(0)).unwrap();
    let he = init_equivalence_check(InitScheme::HeNormal, 32, FfnActivation::Relu, 2000, &rng.fork(1)).unwrap();
    let orth = init_equivalence_check(InitScheme::Orthogonal, 32, FfnActivation::Linear, 2000, &rng.fork(2)).unwrap();
    verdict(
        5,
        "initialization radii at n=32",
        glorot.pass && he.pass && orth.pass,
        format!(
            "Glorot/linear mean {:.4} (tol 5%), He/relu mean {:.4} (tol 7%), orthogonal worst {:.12} (tol 1e-8)",
            glorot.observed, he.observed, orth.observed
        ),
        start.elapsed(),
        secs(120),
    );
}

fn random_point(spec: &CellSpec, rng: &mut RandomSource) -> TransitionPoint {
    let mut state: Vec<f64> = (0..spec.state_len()).map(|_| rng.normal()).collect();
    if let CellKind::Alif { .. } = spec.kind {
        state[spec.width..].iter_mut().for_each(|v| *v = v.abs());
    }
    let output = output_map(spec, &state);
    TransitionPoint { prev: CellState { state, output }, below: (0..spec.input_width).map(|_| rng.normal()).collect() }
}

fn perturbed(spec: &CellSpec, rng: &mut RandomSource) -> CellParams {
    let mut params = spec.init_params(rng).unwrap();
    for (name, m) in params.iter_mut() {
        if !name.starts_with("tau") {
            m.as_mut_slice().iter_mut().for_each(|v| *v += 0.3 * rng.normal());
        }
    }
    params
}

fn fd_jacobians(spec: &CellSpec, params: &CellParams, p: &TransitionPoint) -> (Matrix, Matrix) {
    let h = 1e-5;
    let f = |prev: &[f64], below: &[f64]| {
        let st = CellState { state: prev.to_vec(), output: output_map(spec, prev) };
        cell_forward(spec, params, &st, below).unwrap().state
    };
    let column = |a: Vec<f64>, b: Vec<f64>, on_state: bool| {
        let (fa, fb) = if on_state { (f(&a, &p.below), f(&b, &p.below)) } else { (f(&p.prev.state, &a), f(&p.prev.state, &b)) };
        fa.iter().zip(&fb).map(|(x, y)| (x - y) / (2.0 * h)).collect::<Vec<f64>>()
    };
    let n = spec.state_len();
    let mut time = Matrix::zeros(n, n);
    for j in 0..n {
        let (mut a, mut b) = (p.prev.state.clone(), p.prev.state.clone());
        a[j] += h;
        b[j] -= h;
        column(a, b, true).iter().enumerate().for_each(|(i, v)| time[(i, j)] = *v);
    }
    let mut depth = Matrix::zeros(n, p.below.len());
    for j in 0..p.below.len() {
        let (mut a, mut b) = (p.below.clone(), p.below.clone());
        a[j] += h;
        b[j] -= h;
        column(a, b, false).iter().enumerate().for_each(|(i, v)| depth[(i, j)] = *v);
    }
    (time, depth)
}

#[test]
fn c06_jacobians_match_finite_differences() {
    let start = Instant::now();
    let relaxed = |variant| CellKind::Alif { variant, gamma: 0.5, omega: 1.0, relaxed: true };
    let kinds = [
        CellKind::Pascal { rho: 0.8 },
        CellKind::Simple { activation: Activation::Sigmoid },
        CellKind::Simple { activation: Activation::Relu },
        CellKind::Simple { activation: Activation::Swish },
        CellKind::Gru,
        CellKind::Lstm,
        relaxed(AlifVariant::Plus),
        relaxed(AlifVariant::Pm),
    ];
    let mut rng = RandomSource::new(6);
    let mut lines = Vec::new();
    let mut pass = true;
    for kind in kinds {
        let tol = if matches!(kind, CellKind::Alif { .. }) { 1e-5 } else { 1e-6 };
        let (w, m) = if matches!(kind, CellKind::Pascal { .. }) { (4, 4) } else { (4, 3) };
        let spec = CellSpec::new(kind, w, m).unwrap();
        let mut worst = 0.0f64;
        for _ in 0..100 {
            let params = perturbed(&spec, &mut rng);
            let p = random_point(&spec, &mut rng);
            let (ft, fd) = fd_jacobians(&spec, &params, &p);
            let jt = jac_time(&spec, &params, &p).unwrap();
            let jd = jac_depth(&spec, &params, &p, None).unwrap();
            worst = worst.max(jt.max_abs_diff(&ft).unwrap() / ft.max_abs().max(1.0));
            worst = worst.max(jd.max_abs_diff(&fd).unwrap() / fd.max_abs().max(1.0));
        }
        pass &= worst < tol;
        lines.push(format!("{}{} {worst:.1e}", kind.name(), if matches!(kind, CellKind::Alif { .. }) { "(relaxed)" } else { "" }));
    }
    verdict(6, "analytic Jacobians vs central differences", pass, lines.join(", "), start.elapsed(), secs(60));
}

#[test]
fn c07_pretraining_converges() {
    let start = Instant::now();
    // (a) each kappa step moves rho by at most the clip factor, plus the
    // final measuring step
    let pascal = StackConfig::uniform(CellKind::Pascal { rho: 2.0 }, 3, 2, 2, Readout::Identity).unwrap();
    let cfg = PretrainConfig { grad_mode: Some(GradMode::KappaOnly), ..PretrainConfig::with_target(1.0) };
    let params = pascal.init_params(&RandomSource::new(0)).unwrap();
    let a = pretrain_run(&pascal, params, &cfg, &mut GaussianBatches::new(2, 6, 2, RandomSource::new(1)), &RandomSource::new(2))
        .unwrap();
    let bound = (2.0f64.ln() / (1.0f64 / 0.85).ln()).ceil() as usize + 1;
    let a_ok = a.converged && a.steps_taken <= bound;

    // (b) depth-2 width-8 GRU towards 0.5
    let gru = StackConfig::uniform(CellKind::Gru, 2, 8, 2, Readout::Identity).unwrap();
    let rng = RandomSource::new(0);
    let params = gru.init_params(&rng.fork(0)).unwrap();
    let cfg = PretrainConfig::with_target(0.5);
    let b = pretrain_run(&gru, params, &cfg, &mut GaussianBatches::new(2, 10, 4, rng.fork(1)), &rng.fork(2)).unwrap();
    let s = &b.final_stats;
    let b_ok = b.converged && b.steps_taken <= 500 && (s.mean_rho - 0.5).abs() <= 0.02 && s.std_rho < 0.2 && s.ema_std < 0.2;
    verdict(
        7,
        "pre-training convergence",
        a_ok && b_ok,
        format!(
            "(a) PascalRNN 2.0 -> 1 in {} steps (bound {bound}); (b) GRU {} in {} steps, mean {:.4}, std {:.4}, EMA {:.4}",
            a.steps_taken,
            if b.converged { "converged" } else { "did not converge" },
            b.steps_taken,
            s.mean_rho,
            s.std_rho,
            s.ema_std
        ),
        start.elapsed(),
        secs(300),
    );
}

#[test]
fn c08_variance_growth_separation() {
    let start = Instant::now();
    let reports = run_claim(Claim::Halfrho, &VerifyOptions { seed: 8, samples: None, timing: false }).unwrap();
    verdict(
        8,
        "update-variance growth exponent",
        reports.iter().all(|r| r.pass),
        format!("rho=0.5 exponent {:.3} (<= 1.2), rho=1 exponent {:.3} (> 2)", reports[0].observed, reports[1].observed),
        start.elapsed(),
        secs(300),
    );
}

#[test]
fn c09_psd_determinants() {
    let start = Instant::now();
    let r = psd_superadditivity_check(6, 1000, &RandomSource::new(9)).unwrap();
    verdict(9, "PSD determinant properties", r.pass, format!("{} violations in 1000 pairs", r.observed), start.elapsed(), secs(10));
}

#[test]
fn c10_pretraining_helps_training() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    // harness defaults: rowsum T=20, depth-2 width-16 sigmoid SimpleRNN, 4 seeds
    let base = RunConfig { output_dir: dir.path().join("base"), ..RunConfig::default() };
    let pre = RunConfig {
        output_dir: dir.path().join("pre"),
        pretrain: Some(PretrainConfig::with_target(0.5)),
        ..RunConfig::default()
    };
    let a = train_run(&base).unwrap().aggregate;
    let b = train_run(&pre).unwrap().aggregate;
    let (ma, mb) = (&a.metrics[1], &b.metrics[1]);
    verdict(
        10,
        "rho_t=0.5 pre-training vs baseline on rowsum",
        a.failed.is_empty() && b.failed.is_empty() && mb.mean >= ma.mean,
        format!(
            "test accuracy pre-trained {:.4} +- {:.4} vs baseline {:.4} +- {:.4} over {} seeds",
            mb.mean, mb.std, ma.mean, ma.std, mb.n
        ),
        start.elapsed(),
        secs(900),
    );
}

fn lsc(args: &[&str]) -> (i32, Vec<u8>) {
    let out = Command::new(env!("CARGO_BIN_EXE_lsc")).args(args).env_remove("LSC_SEED").output().unwrap();
    (out.status.code().unwrap_or(-1), out.stdout)
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    for entry in walk(dir) {
        out.push((entry.strip_prefix(dir).unwrap().display().to_string(), std::fs::read(&entry).unwrap()));
    }
    out.sort();
    out
}

fn walk(dir: &Path) -> Vec<std::path::PathBuf> {
    let mut all = Vec::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            all.extend(walk(&p));
        } else {
            all.push(p);
        }
    }
    all
}

#[test]
fn c11_commands_replay() {
    let start = Instant::now();
    let tmp = tempfile::tempdir().unwrap();
    let d = |name: &str| tmp.path().join(name).display().to_string();
    let config = tmp.path().join("run.toml");
    std::fs::write(
        &config,
        "max_epochs = 3\nseeds = [1, 2]\n[task]\nsteps = 6\ntrain = 32\nval = 16\ntest = 16\n[stack]\nwidth = 6\n[pretrain]\ntarget_time = 0.5\ntarget_depth = 0.5\n",
    )
    .unwrap();
    let mut mismatches = Vec::new();
    let mut commands = 0;
    let verify_args: Vec<Vec<&str>> = vec![
        vec!["verify", "--claim", "psd", "--samples", "100", "--seed", "11", "--no-timing"],
        vec!["verify", "--claim", "path_growth", "--no-timing"],
        vec!["verify", "--claim", "pascal_bound", "--seed", "11", "--no-timing"],
        vec!["verify", "--claim", "init_equivalence", "--samples", "100", "--seed", "11", "--no-timing"],
        vec!["verify", "--claim", "kostlan", "--samples", "1000", "--seed", "11", "--no-timing"],
        vec!["verify", "--claim", "halfrho", "--samples", "4", "--seed", "11", "--no-timing"],
    ];
    for args in &verify_args {
        commands += 1;
        if lsc(args).1 != lsc(args).1 {
            mismatches.push(args.join(" "));
        }
    }
    let mut dir_pairs = Vec::new();
    for (tag, args) in [
        ("pascal", vec!["pascal", "--depth", "4", "--time", "30", "--rho", "1.0", "--seed", "3", "--out"]),
        ("pretrain", vec!["pretrain", "--cell", "rnn-sigmoid", "--width", "4", "--rho-target", "0.5", "--seed", "3", "--out"]),
        ("train", vec!["train", "--config", config.to_str().unwrap(), "--output-dir"]),
    ] {
        commands += 1;
        let (a, b) = (d(&format!("{tag}_a")), d(&format!("{tag}_b")));
        let target = |p: &String| if tag == "pascal" { format!("{p}.csv") } else { p.clone() };
        let run = |p: &String| {
            let mut full = args.clone();
            let t = target(p);
            full.push(&t);
            let out = lsc(&full);
            (out, t)
        };
        let ((ca, oa), ta) = run(&a);
        let ((cb, ob), tb) = run(&b);
        if ca != cb || oa != ob {
            mismatches.push(format!("{tag} stdout"));
        }
        dir_pairs.push((tag, ta, tb));
    }
    for (tag, a, b) in &dir_pairs {
        let (pa, pb) = (Path::new(a), Path::new(b));
        let same = if pa.is_dir() { files(pa) == files(pb) } else { std::fs::read(pa).unwrap() == std::fs::read(pb).unwrap() };
        if !same {
            mismatches.push(format!("{tag} files"));
        }
    }
    commands += 1;
    let train_a = &dir_pairs[2].1;
    if lsc(&["report", train_a]).1 != lsc(&["report", &dir_pairs[2].2]).1 {
        mismatches.push("report".into());
    }
    verdict(
        11,
        "bit-identical replay of every command",
        mismatches.is_empty(),
        format!("{commands} commands replayed twice, mismatches: {mismatches:?}"),
        start.elapsed(),
        secs(600),
    );
}
