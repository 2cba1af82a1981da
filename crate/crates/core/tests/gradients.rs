use nodec::grad::{self, LossSpec, TbpttVariant};
use nodec::nn::{self, Activation, InitScheme, MlpSpec};
use nodec::numkit::SeededRng;
use nodec::ode::ControlProblem;
use proptest::prelude::*;

fn problem(kind: usize, a: f64, x0: f64, target: f64) -> ControlProblem {
    match kind {
        0 => ControlProblem::integrator(x0, target, 1.0, 15).unwrap(),
        1 => ControlProblem::scalar_linear(a, 1.0, x0, target, 1.0, 15).unwrap(),
        2 => ControlProblem::linear_2d_benchmark(15),
        _ => ControlProblem::moving_particle(15),
    }
}

fn activation(i: usize) -> Activation {
    [
        Activation::Linear,
        Activation::Relu,
        Activation::leaky_relu(),
        Activation::elu(),
        Activation::Tanh,
    ][i]
}

fn rel(a: &[f64], b: &[f64]) -> f64 {
    let d: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    d / b.iter().map(|y| y * y).sum::<f64>().sqrt().max(1e-12)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(20))]

    #[test]
    fn adjoint_gradient_matches_finite_differences(
        kind in 0usize..4,
        act in 0usize..5,
        width in 1usize..5,
        depth in 1usize..3,
        seed in any::<u64>(),
        a in -1.0f64..1.0,
        x0 in -1.0f64..1.0,
        target in -2.0f64..2.0,
        penalized in any::<bool>(),
    ) {
        let p = problem(kind, a, x0, target);
        let spec = MlpSpec::new(&vec![width; depth], activation(act), p.control_dim(), true);
        let theta = nn::init_params(&spec, InitScheme::fan_in_uniform(), &mut SeededRng::new(seed)).unwrap();
        let loss = match (penalized, kind) {
            (false, _) => LossSpec::terminal(),
            (true, 3) => LossSpec::work(0.1),
            (true, _) => LossSpec::energy(0.1),
        };
        let g = grad::bptt_grad(&p, &spec, &theta, &loss).unwrap();
        let fd = grad::fd_grad(&p, &spec, &theta, &loss, 1e-6).unwrap();
        prop_assert!(rel(&g.grad, &fd) < 1e-5, "{:?} vs {:?}", g.grad, fd);

        let mut sum = vec![0.0; theta.len()];
        for k in 0..p.steps {
            let t = grad::tbptt_grad(&p, &spec, &theta, k, TbpttVariant::Propagated, &loss).unwrap();
            for (s, v) in sum.iter_mut().zip(&t.grad) {
                *s += v;
            }
        }
        prop_assert!(rel(&sum, &g.grad) < 1e-10);
    }
}
