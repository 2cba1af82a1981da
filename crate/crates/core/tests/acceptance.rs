//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs as a plain binary so the verdicts appear in `cargo test` output.
//! A FAIL is reported, not raised; the process only fails on internal errors.

use std::error::Error;
use std::f64::consts::E;
use std::time::Instant;

use nodec::config::{sampled_oracle_energy, ProblemSpec};
use nodec::experiments::*;
use nodec::grad::{self, LossSpec, Protocol, Schedule, TbpttVariant};
use nodec::landscape::{self, ProjectionConfig};
use nodec::nn::{self, Activation, InitScheme, MlpSpec, ParamVector};
use nodec::numkit::SeededRng;
use nodec::oc_analytic;
use nodec::ode::{self, ControlProblem, ControlledDynamics, SystemKind};
use nodec::optim::{self, DeltaUWeights, OptimizerConfig, TrainConfig};

type Outcome = std::result::Result<(bool, String), Box<dyn Error>>;

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

fn norm_rel(a: &[f64], b: &[f64]) -> f64 {
    let d: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let n: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    d / n.max(1e-12)
}

fn workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get()).min(4)
}

fn random_problem(kind: usize, rng: &mut SeededRng) -> ControlProblem {
    let steps = 20;
    match kind {
        0 => ControlProblem::integrator(rng.uniform(-1.0, 1.0), rng.uniform(-2.0, 2.0), 1.0, steps).unwrap(),
        1 => ControlProblem::scalar_linear(
            rng.uniform(-1.0, 1.0),
            rng.uniform(0.5, 1.5),
            rng.uniform(-1.0, 1.0),
            rng.uniform(-2.0, 2.0),
            rng.uniform(0.5, 1.5),
            steps,
        )
        .unwrap(),
        2 => ControlProblem::linear_2d_benchmark(steps),
        _ => ControlProblem::moving_particle(steps),
    }
}

fn c1_gradients() -> Outcome {
    let acts = [
        Activation::Linear,
        Activation::Relu,
        Activation::leaky_relu(),
        Activation::elu(),
        Activation::Tanh,
    ];
    let mut rng = SeededRng::new(2024);
    let (mut worst_fd, mut worst_split, mut count) = (0.0f64, 0.0f64, 0);
    for kind in 0..4 {
        for act in acts {
            for cfg in 0..20 {
                let problem = random_problem(kind, &mut rng);
                let hidden: Vec<usize> = (0..1 + rng.below(2)).map(|_| 1 + rng.below(5)).collect();
                let spec = MlpSpec::new(&hidden, act, problem.control_dim(), true);
                let theta = nn::init_params(&spec, InitScheme::fan_in_uniform(), &mut rng)?;
                let mu = if cfg % 2 == 0 { 0.0 } else { 0.1 };
                let loss = match (mu == 0.0, problem.dynamics.kind() == SystemKind::MovingParticle) {
                    (true, _) => LossSpec::terminal(),
                    (false, true) => LossSpec::work(mu),
                    (false, false) => LossSpec::energy(mu),
                };
                let g = grad::bptt_grad(&problem, &spec, &theta, &loss)?;
                let fd = grad::fd_grad(&problem, &spec, &theta, &loss, 1e-6)?;
                worst_fd = worst_fd.max(norm_rel(&g.grad, &fd));
                let mut sum = vec![0.0; theta.len()];
                for k in 0..problem.steps {
                    let t = grad::tbptt_grad(&problem, &spec, &theta, k, TbpttVariant::Propagated, &loss)?;
                    sum.iter_mut().zip(&t.grad).for_each(|(s, v)| *s += v);
                }
                worst_split = worst_split.max(norm_rel(&sum, &g.grad));
                count += 1;
            }
        }
    }
    Ok((
        worst_fd < 1e-5 && worst_split < 1e-10,
        format!("{count} configs over 4 systems x 5 activations; worst FD rel err {worst_fd:.2e}, worst TBPTT-sum rel err {worst_split:.2e}"),
    ))
}

fn c2_phase_maps() -> Outcome {
    let grid = GridSpec {
        x: Axis::new("w0", -2.0, 2.0, 5),
        y: Axis::new("b0", -3.0, 1.0, 5),
    };
    let lin = PhaseConfig::new(NeuronKind::Linear, grid.clone(), 0.1, 10_000);
    let cells = phase_diagram(&lin, 1)?;
    let worst_line = cells.iter().map(|c| c.line_distance).fold(0.0, f64::max);
    let relu_grid = GridSpec {
        x: Axis::new("w0", -2.0, -0.1, 5),
        y: grid.y.clone(),
    };
    let relu = PhaseConfig::new(NeuronKind::Relu, relu_grid, 0.1, 10_000);
    let worst_b = phase_diagram(&relu, 1)?.iter().map(|c| (c.b + 1.0).abs()).fold(0.0, f64::max);
    Ok((
        cells.len() == 25 && worst_line < 1e-6 && worst_b < 1e-6,
        format!("linear: max distance to w = -2(1+b) {worst_line:.2e}; relu (w0 < 0): max |b+1| {worst_b:.2e}"),
    ))
}

fn c3_constant_oracle() -> Outcome {
    let oc = oc_analytic::constant_oc(0.0, -1.0, 1.0)?;
    let p = ControlProblem::integrator(0.0, -1.0, 1.0, 10_000)?;
    let sampled = sampled_oracle_energy(&p, &oc)?;
    let u_ok = (0..=10).all(|i| oc.u(i as f64 / 10.0) == vec![-1.0]);
    let r = rel(sampled, 0.5);
    Ok((
        u_ok && oc.energy == 0.5 && r < 1e-3,
        format!("u* = -1 on [0,1]: {u_ok}; E* = {}; sampled E_T rel err {r:.2e} at K = 10^4", oc.energy),
    ))
}

fn c4_time_dependent_oracle() -> Outcome {
    let oc = oc_analytic::scalar_linear_oc(1.0, 1.0, 0.0, 1.0, 1.0)?;
    let want = 1.0 / (E * E - 1.0);
    let p = ControlProblem::scalar_linear(1.0, 1.0, 0.0, 1.0, 1.0, 10_000)?;
    let tr = ode::integrate_euler(&p, |t| oc.u(t))?;
    let l = ode::terminal_loss(&tr, &p.target);
    let d = (oc.energy - want).abs();
    Ok((
        d <= 1e-12 && l < 1e-6,
        format!("E* = {:.12} (|diff| {d:.1e}); simulated terminal loss {l:.2e} at K = 10^4", oc.energy),
    ))
}

fn c5_implicit_regularization() -> Outcome {
    let cfg = OptimizerStudyConfig::default();
    let runs = optimizer_study(&cfg, 1)?;
    let adam: Vec<_> = runs.iter().filter(|r| r.optimizer == "adam").collect();
    let best = adam
        .iter()
        .filter(|r| r.loss < 1e-4)
        .min_by(|a, b| a.energy_ratio.total_cmp(&b.energy_ratio))
        .ok_or("no Adam run reached loss < 1e-4")?;
    let sd = runs.iter().find(|r| r.optimizer == "sd").ok_or("missing SD run")?;
    let listing: Vec<String> = adam
        .iter()
        .map(|r| format!("lr {}: L {:.1e} E/E* {:.4} MSE {:.2e}", r.lr, r.loss, r.energy_ratio, r.mse_u))
        .collect();
    let pass = best.loss < 1e-4 && best.energy_ratio < 1.10 && sd.mse_u >= 2.0 * best.mse_u;
    let first = best.mse_curve.first().map_or(f64::NAN, |c| c.1);
    let last = best.mse_curve.last().map_or(f64::NAN, |c| c.1);
    Ok((
        pass,
        format!(
            "Adam [{}]; best lr {} ; SD lr 0.15 MSE {:.2e} = {:.0}x best Adam; best-run MSE snapshots {first:.2e} -> {last:.2e}",
            listing.join("; "),
            best.lr,
            sd.mse_u,
            sd.mse_u / best.mse_u
        ),
    ))
}

fn c6_constant_baseline() -> Outcome {
    let p = ControlProblem::scalar_linear(1.0, 1.0, 0.0, 1.0, 1.0, 10_000)?;
    let spec = MlpSpec::bias_only(1);
    let theta0 = ParamVector::new(&spec, vec![0.0])?;
    let tc = TrainConfig::new(Protocol::Bptt, OptimizerConfig::sd(0.1), 200);
    let out = optim::train(&p, &spec, &theta0, &tc, &mut SeededRng::new(0))?;
    let c = out.theta_final.theta[0];
    let ev = grad::evaluate(&p, &spec, &out.theta_final, &LossSpec::terminal())?;
    let energy = ode::control_energy(&ev.traj);
    let c_star = 1.0 / (E - 1.0);
    let e_base = 0.5 / (E - 1.0).powi(2);
    let ratio = energy / (1.0 / (E * E - 1.0));
    Ok((
        (c - c_star).abs() < 1e-4 && (energy - e_base).abs() < 1e-4 && (ratio - 1.08).abs() <= 0.01,
        format!(
            "c = {c:.6} (|c - c*| {:.1e}); E = {energy:.6} (|E - E_base| {:.1e}); E/E* = {ratio:.4}",
            (c - c_star).abs(),
            (energy - e_base).abs()
        ),
    ))
}

fn c7_c8_linearization() -> std::result::Result<(Outcome, Outcome), Box<dyn Error>> {
    let cfg = LinearizationConfig::default();
    let (_, s) = linearization_study(&cfg)?;
    let cont = LinearizationConfig {
        weights: DeltaUWeights::Continuous,
        ..cfg.clone()
    };
    let (_, sc) = linearization_study(&cont)?;
    let c7 = Ok((
        (1.7..=2.3).contains(&s.deviation_ratio),
        format!(
            "median deviation {:.3e} at lr {} vs {:.3e} at lr/2, ratio {:.3} (Euler-consistent weights); continuous weights ratio {:.3}",
            s.median_deviation, cfg.lr, s.median_deviation_half, s.deviation_ratio, sc.deviation_ratio
        ),
    ));
    let c8 = Ok((
        (3.0..=5.0).contains(&s.residual_ratio),
        format!(
            "median |r_n| {:.3e} at lr {} vs {:.3e} at lr/2, ratio {:.3}",
            s.median_residual, cfg.lr, s.median_residual_half, s.residual_ratio
        ),
    ));
    Ok((c7, c8))
}

fn c9_benchmark() -> Outcome {
    let spec = ProblemSpec::Benchmark2d { steps: 100 };
    let e_star = spec.oracle()?.energy;
    let oracle_ok = (e_star - 34.0).abs() <= 1.0;
    let cfg = ComparisonConfig::default();
    let cmp = protocol_comparison(&cfg)?;
    let run_ok = |r: &ProtocolRun| r.best_loss < 1e-2 && rel(r.best_energy, e_star) <= 0.25;
    let ops_ok = cmp.tbptt.vjp_per_epoch == 1.0 && cmp.bptt.vjp_per_epoch == 100.0;
    let time_ok = cmp.tbptt.seconds_per_epoch < cmp.bptt.seconds_per_epoch;
    let cyclic = protocol_comparison(&ComparisonConfig {
        schedule: Schedule::Cyclic,
        ..cfg.clone()
    })?;
    let desc = |r: &ProtocolRun| format!("{} L {:.1e} E {:.2}", r.label, r.best_loss, r.best_energy);
    Ok((
        oracle_ok && run_ok(&cmp.bptt) && run_ok(&cmp.tbptt) && ops_ok && time_ok,
        format!(
            "Gramian E* = {e_star:.4} (34 +/- 1: {}); {}; {} (uniform random index); vjp/epoch {} vs {}; s/epoch {:.2e} vs {:.2e}; cyclic-index TBPTT for reference: L {:.1e}",
            if oracle_ok { "ok" } else { "no" },
            desc(&cmp.bptt),
            desc(&cmp.tbptt),
            cmp.tbptt.vjp_per_epoch,
            cmp.bptt.vjp_per_epoch,
            cmp.tbptt.seconds_per_epoch,
            cmp.bptt.seconds_per_epoch,
            cyclic.tbptt.best_loss
        ),
    ))
}

fn c10_moving_particle() -> Outcome {
    let arch = ArchScanConfig {
        layers: vec![8],
        activations: vec![Activation::elu()],
        ..Default::default()
    };
    let row = architecture_scan(&arch, 1)?.pop().ok_or("empty scan")?;
    let arch_ok = row.loss < 1e-5 && row.mse_u < 1e-3;
    let rows = mu_sweep(&MuSweepConfig::default(), workers())?;
    let best = rows
        .iter()
        .filter(|r| !r.reference && !r.diverged)
        .min_by(|a, b| a.terminal.total_cmp(&b.terminal))
        .ok_or("no finite multiplier run")?;
    let mu_ok = (1e-4..=1e-2).contains(&best.mu) && (best.work - 1.0).abs() <= 0.1;
    let reference = rows.iter().find(|r| r.reference).ok_or("missing reference")?;
    Ok((
        arch_ok && mu_ok,
        format!(
            "H=8 ELU: L {:.2e}, MSE {:.2e}; mu-sweep terminal-loss minimum at mu = {:.0e} (L {:.2e}, W {:.4}); mu = 0 reference L {:.2e}",
            row.loss, row.mse_u, best.mu, best.terminal, best.work, reference.terminal
        ),
    ))
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn c11_sweeps() -> Outcome {
    let w = workers();
    let constant = depth_width_sweep(&SweepPreset::Constant.config(), w)?;
    let col: Vec<&SweepCellResult> = constant.iter().filter(|c| c.layers == 9).collect();
    let med_e = median(col.iter().map(|c| c.energy).collect());
    let med_var = median(col.iter().map(|c| c.var_u).collect());
    let const_ok = rel(med_e, 0.5) <= 0.10 && med_var < 1e-2;
    let td = depth_width_sweep(&SweepPreset::TimeDependent.config(), w)?;
    let best = td
        .iter()
        .filter(|c| c.loss < 1e-3)
        .min_by(|a, b| a.energy.total_cmp(&b.energy))
        .ok_or("no time-dependent cell reached loss < 1e-3")?;
    let td_ok = best.energy < 0.165;
    Ok((
        const_ok && td_ok,
        format!(
            "constant 9x10: 9-layer median E {med_e:.4}, median var {med_var:.3e}; time-dependent 9x10: lowest E among loss < 1e-3 is {:.4} ({} layers, {} neurons); workers {w}",
            best.energy, best.layers, best.max_neurons
        ),
    ))
}

fn c12_projection() -> Outcome {
    let cfg = ProjectionConfig::default();
    let problem = cfg.problem.build()?;
    let oc = cfg.problem.oracle()?;
    let mlp = cfg.network.mlp(1)?;
    let base = landscape::run_projection(&cfg, workers())?;
    let theta = ParamVector::new(&mlp, base.theta_star.clone())?;
    let mut minima = usize::from(landscape::is_local_min(&base.cells, 0.05));
    let mut sharp = vec![base.sharpness];
    for seed in 1..5u64 {
        let c = ProjectionConfig {
            direction_seed: cfg.direction_seed + seed,
            ..cfg.clone()
        };
        let run = landscape::project_around(&c, &problem, &mlp, &oc, &theta, workers())?;
        minima += usize::from(landscape::is_local_min(&run.cells, 0.05));
        sharp.push(run.sharpness);
    }
    let (l, _, e) = base.center;
    Ok((
        minima == 5,
        format!(
            "{minima}/5 directions with L(0) <= L(alpha) for |alpha| <= 0.05; center L {l:.2e}, E {e:.5} (E/E* {:.4}); sharpness {:.2e}..{:.2e}",
            e / oc.energy,
            sharp.iter().cloned().fold(f64::INFINITY, f64::min),
            sharp.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
        ),
    ))
}

fn report(id: usize, name: &str, outcome: Outcome, secs: f64) -> bool {
    match outcome {
        Ok((pass, detail)) => {
            println!("{} criterion {id:>2} {name}: {detail} [{secs:.1} s]", if pass { "PASS" } else { "FAIL" });
            pass
        }
        Err(e) => {
            println!("FAIL criterion {id:>2} {name}: error: {e} [{secs:.1} s]");
            false
        }
    }
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, f64) {
    let t = Instant::now();
    let v = f();
    (v, t.elapsed().as_secs_f64())
}

fn main() {
    let mut passed = 0;
    let mut total = 0;
    let mut run = |id: usize, name: &str, f: fn() -> Outcome| {
        let (o, s) = timed(f);
        total += 1;
        passed += usize::from(report(id, name, o, s));
    };
    run(1, "gradient correctness", c1_gradients);
    run(2, "analytic single-neuron maps", c2_phase_maps);
    run(3, "constant-control oracle", c3_constant_oracle);
    run(4, "time-dependent oracle", c4_time_dependent_oracle);
    run(5, "implicit energy regularization", c5_implicit_regularization);
    run(6, "constant-control baseline", c6_constant_baseline);
    let ((c7, c8), s) = match timed(c7_c8_linearization) {
        (Ok(v), s) => (v, s),
        (Err(e), s) => {
            let msg = e.to_string();
            ((Err(msg.clone().into()), Err(msg.into())), s)
        }
    };
    total += 2;
    passed += usize::from(report(7, "control-linearization identity", c7, s));
    passed += usize::from(report(8, "energy-evolution identity", c8, s));
    let mut run = |id: usize, name: &str, f: fn() -> Outcome| {
        let (o, s) = timed(f);
        total += 1;
        passed += usize::from(report(id, name, o, s));
    };
    run(9, "two-dimensional benchmark", c9_benchmark);
    run(10, "moving particle", c10_moving_particle);
    run(11, "depth-by-width sweeps", c11_sweeps);
    run(12, "projection sanity", c12_projection);
    println!("acceptance: {passed}/{total} criteria passed");
}
