use proptest::prelude::*;

use super::*;

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-12)
}

#[test]
fn record_mul_keeps_cofactor_partials() {
    let g = Graph::new();
    let a = g.variable(2.0).unwrap();
    let b = g.variable(3.0).unwrap();
    let c = g.record(OpKind::Mul, &[a, b], 6.0, &[3.0, 2.0]).unwrap();
    let node = g.node(c).unwrap();
    assert_eq!(node.value, 6.0);
    assert_eq!(node.parents, vec![a.index(), b.index()]);
    assert_eq!(node.local_partials, vec![3.0, 2.0]);
    assert!(node.parents.iter().all(|&p| p < c.index()));
}

#[test]
fn record_leaky_relu_negative_input() {
    let g = Graph::new();
    let a = g.variable(-1.0).unwrap();
    let y = a.leaky_relu(0.2);
    assert_eq!(y.value(), -0.2);
    assert_eq!(g.node(y).unwrap().local_partials, vec![0.2]);
}

#[test]
fn record_rejects_non_finite_values_and_bad_partials() {
    let g = Graph::new();
    let a = g.variable(1.0).unwrap();
    let b = g.variable(2.0).unwrap();
    assert!(matches!(
        g.record(OpKind::Add, &[a, b], f64::NAN, &[1.0, 1.0]),
        Err(DiffError::NonFiniteValue { .. })
    ));
    assert!(matches!(g.record(OpKind::Add, &[a, b], 3.0, &[1.0]), Err(DiffError::PartialCount { .. })));
    assert!(matches!(
        g.record(OpKind::Add, &[a, b], 3.0, &[1.0, f64::INFINITY]),
        Err(DiffError::NonFinitePartial { .. })
    ));
    assert!(g.variable(f64::NAN).is_err());
}

#[test]
fn operator_failures_poison_the_graph() {
    let g = Graph::new();
    let a = g.variable(0.0).unwrap();
    let bad = a.ln();
    assert!(!bad.is_valid());
    let later = bad + a;
    assert!(!later.is_valid());
    assert!(g.backward(a, &[a]).is_err());
}

#[test]
fn backward_square_and_sum() {
    let g = Graph::new();
    let x = g.variable(3.0).unwrap();
    assert_eq!(g.backward(x * x, &[x]).unwrap(), vec![6.0]);

    let x = g.variable(1.0).unwrap();
    let y = g.variable(2.0).unwrap();
    assert_eq!(g.backward(x + y, &[x, y]).unwrap(), vec![1.0, 1.0]);
}

#[test]
fn backward_exp_sin_matches_finite_differences() {
    let g = Graph::new();
    let x = g.variable(0.7).unwrap();
    let y = x.sin().exp();
    let grad = g.backward(y, &[x]).unwrap()[0];
    let fd = finite_difference_gradient(|p| p[0].sin().exp(), &[0.7], 1e-5).unwrap()[0];
    assert!(rel_err(grad, fd) < 1e-6, "{grad} vs {fd}");
}

#[test]
fn backward_rejects_foreign_nodes() {
    let g1 = Graph::new();
    let g2 = Graph::new();
    let x = g1.variable(1.0).unwrap();
    let y = g2.variable(1.0).unwrap();
    assert!(matches!(g1.backward(x, &[y]), Err(DiffError::ForeignNode { .. })));
    assert!(matches!(g1.record(OpKind::Add, &[x, y], 2.0, &[1.0, 1.0]), Err(DiffError::ForeignNode { .. })));
}

#[test]
fn unreachable_inputs_have_zero_gradient() {
    let g = Graph::new();
    let x = g.variable(1.0).unwrap();
    let y = g.variable(5.0).unwrap();
    let out = x.scale(2.0);
    assert_eq!(g.backward(out, &[x, y]).unwrap(), vec![2.0, 0.0]);
}

struct Linear2;
impl VectorFn for Linear2 {
    fn input_dim(&self) -> usize {
        2
    }
    fn output_dim(&self) -> usize {
        2
    }
    fn apply<S: Scalar>(&self, z: &[S]) -> Vec<S> {
        vec![z[0].scale(2.0), z[1].scale(3.0)]
    }
}

struct Product;
impl VectorFn for Product {
    fn input_dim(&self) -> usize {
        2
    }
    fn output_dim(&self) -> usize {
        1
    }
    fn apply<S: Scalar>(&self, z: &[S]) -> Vec<S> {
        vec![z[0] * z[1]]
    }
}

#[test]
fn jacobian_of_linear_and_product_maps() {
    let j = jacobian_values(&Linear2, &[0.3, -1.2]).unwrap();
    assert_eq!(j, nalgebra::DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 3.0]));
    let j = jacobian_values(&Product, &[2.0, 3.0]).unwrap();
    assert_eq!(j, nalgebra::DMatrix::from_row_slice(1, 2, &[3.0, 2.0]));
}

#[test]
fn jacobian_entries_are_differentiable() {
    let g = Graph::new();
    let z = g.variables(&[3.0]).unwrap();
    let jac = jacobian(&g, |z| vec![z[0] * z[0]], &z).unwrap();
    assert_eq!(jac.get(0, 0).value(), 6.0);
    assert_eq!(g.backward(jac.get(0, 0), &z).unwrap(), vec![2.0]);
    assert_eq!(jac.outputs()[0].value(), 9.0);
}

#[test]
fn finite_difference_examples() {
    let j = finite_difference_jacobian(|z| vec![2.0 * z[0]], &[1.0], 1e-5).unwrap();
    assert!((j[(0, 0)] - 2.0).abs() < 1e-8);
    let j = finite_difference_jacobian(|z| vec![z[0] * z[0]], &[3.0], 1e-5).unwrap();
    assert!((j[(0, 0)] - 6.0).abs() < 1e-6);
    let j = finite_difference_jacobian(|z| vec![z[0].sin()], &[0.0], 1e-5).unwrap();
    assert!((j[(0, 0)] - 1.0).abs() < 1e-8);
    assert!(matches!(finite_difference_jacobian(|z| vec![z[0]], &[0.0], 0.0), Err(DiffError::InvalidStep(_))));
    assert!(matches!(
        finite_difference_jacobian(|z| vec![z[0].ln()], &[0.0], 1e-3),
        Err(DiffError::NonFiniteOutput { coordinate: 0 })
    ));
}

#[test]
fn graph_is_transferable_between_threads() {
    let g = Graph::new();
    let handle = std::thread::spawn(move || {
        let x = g.variable(2.0).unwrap();
        g.backward(x * x, &[x]).unwrap()[0]
    });
    assert_eq!(handle.join().unwrap(), 4.0);
}

#[test]
fn clearing_bumps_generation() {
    let mut g = Graph::new();
    g.variable(1.0).unwrap();
    assert_eq!(g.len(), 1);
    g.clear();
    assert!(g.is_empty());
    assert_eq!(g.generation(), 1);
}

/// Two-layer network `R^2 -> R^3 -> R^2`, weights passed as graph values.
fn small_mlp<S: Scalar>(w: &[S], z: &[S], smooth: bool) -> Vec<S> {
    let act = |x: S| if smooth { x.sin() } else { x.leaky_relu(0.2) };
    let hidden: Vec<S> = (0..3).map(|h| act(w[2 * h] * z[0] + w[2 * h + 1] * z[1] + w[6 + h])).collect();
    (0..2).map(|o| hidden[0] * w[9 + 3 * o] + hidden[1] * w[10 + 3 * o] + hidden[2] * w[11 + 3 * o] + w[15 + o]).collect()
}

/// Sum of squared Jacobian entries, evaluated over plain values.
fn jacobian_energy(params: &[f64], z: &[f64], smooth: bool) -> f64 {
    let jac = finite_difference_jacobian(|zz| small_mlp(params, zz, smooth), z, 1e-6).unwrap();
    jac.iter().map(|v| v * v).sum()
}

fn nested_gradient(params: &[f64], z: &[f64], smooth: bool) -> Vec<f64> {
    let g = Graph::new();
    let w = g.variables(params).unwrap();
    let zv = g.variables(z).unwrap();
    let jac = jacobian(
        &g,
        |zd| {
            let wd: Vec<Dual> = w.iter().map(|&v| Dual::constant(v)).collect();
            small_mlp(&wd, zd, smooth)
        },
        &zv,
    )
    .unwrap();
    let squares: Vec<Var> = (0..jac.rows())
        .flat_map(|r| (0..jac.cols()).map(move |c| (r, c)))
        .map(|(r, c)| jac.get(r, c) * jac.get(r, c))
        .collect();
    let energy = Var::sum(&squares);
    let mut wrt = w.clone();
    wrt.extend(zv);
    g.backward(energy, &wrt).unwrap()
}

fn vector_rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let norm: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    diff / norm.max(1e-12)
}

#[test]
fn nested_differentiation_matches_finite_differences() {
    use rand::Rng;
    let mut rng = crate::rng::stream_rng(11, 0);
    for smooth in [false, true] {
        for _ in 0..20 {
            let params: Vec<f64> = (0..17).map(|_| rng.random_range(-1.5..1.5)).collect();
            let z: Vec<f64> = (0..2).map(|_| rng.random_range(-2.0..2.0)).collect();
            let grad = nested_gradient(&params, &z, smooth);
            let mut point = params.clone();
            point.extend(&z);
            let fd = finite_difference_gradient(|p| jacobian_energy(&p[..17], &p[17..], smooth), &point, 1e-4).unwrap();
            assert!(vector_rel_err(&grad, &fd) < 1e-4, "smooth={smooth}: {grad:?} vs {fd:?}");
        }
    }
}

#[test]
fn identical_recordings_give_bit_identical_gradients() {
    let params: Vec<f64> = (0..17).map(|i| (i as f64 * 0.37).sin()).collect();
    let a = nested_gradient(&params, &[0.4, -0.9], true);
    let b = nested_gradient(&params, &[0.4, -0.9], true);
    assert_eq!(a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
}

#[derive(Debug, Clone, Copy)]
enum Unary {
    Exp,
    Sin,
    Cos,
    Sqrt,
    Ln,
    Neg,
    Leaky,
}

fn apply_unary<S: Scalar>(op: Unary, x: S) -> S {
    match op {
        Unary::Exp => x.exp(),
        Unary::Sin => x.sin(),
        Unary::Cos => x.cos(),
        Unary::Sqrt => x.sqrt(),
        Unary::Ln => x.ln(),
        Unary::Neg => -x,
        Unary::Leaky => x.leaky_relu(0.2),
    }
}

#[derive(Debug, Clone, Copy)]
enum Binary {
    Add,
    Sub,
    Mul,
    Div,
}

fn apply_binary<S: Scalar>(op: Binary, a: S, b: S) -> S {
    match op {
        Binary::Add => a + b,
        Binary::Sub => a - b,
        Binary::Mul => a * b,
        Binary::Div => a / b,
    }
}

fn close(grad: f64, fd: f64, tol: f64) -> bool {
    (grad - fd).abs() <= tol * fd.abs().max(1.0)
}

proptest! {
    #[test]
    fn unary_primitives_match_finite_differences(
        op in prop_oneof![
            Just(Unary::Exp), Just(Unary::Sin), Just(Unary::Cos), Just(Unary::Sqrt),
            Just(Unary::Ln), Just(Unary::Neg), Just(Unary::Leaky)
        ],
        x in -2.0f64..2.0,
    ) {
        // Domain restrictions and a margin around the LeakyReLU kink.
        let x = match op {
            Unary::Sqrt | Unary::Ln => x.abs() + 0.1,
            Unary::Leaky if x.abs() < 1e-3 => x + 0.01,
            _ => x,
        };
        let g = Graph::new();
        let v = g.variable(x).unwrap();
        let grad = g.backward(apply_unary(op, v), &[v]).unwrap()[0];
        let fd = finite_difference_gradient(|p| apply_unary(op, p[0]), &[x], 1e-6).unwrap()[0];
        prop_assert!(close(grad, fd, 1e-5), "{:?}({}) = {} vs {}", op, x, grad, fd);
    }

    #[test]
    fn binary_primitives_match_finite_differences(
        op in prop_oneof![Just(Binary::Add), Just(Binary::Sub), Just(Binary::Mul), Just(Binary::Div)],
        a in -2.0f64..2.0,
        b in -2.0f64..2.0,
    ) {
        let b = if matches!(op, Binary::Div) && b.abs() < 0.2 { b.signum() * 0.2 + b } else { b };
        let g = Graph::new();
        let (va, vb) = (g.variable(a).unwrap(), g.variable(b).unwrap());
        let grad = g.backward(apply_binary(op, va, vb), &[va, vb]).unwrap();
        let fd = finite_difference_gradient(|p| apply_binary(op, p[0], p[1]), &[a, b], 1e-6).unwrap();
        for (x, y) in grad.iter().zip(&fd) {
            prop_assert!(close(*x, *y, 1e-5), "{:?}: {:?} vs {:?}", op, grad, fd);
        }
    }

    #[test]
    fn norm_matches_finite_differences(xs in proptest::collection::vec(-2.0f64..2.0, 1..5)) {
        prop_assume!(xs.iter().map(|x| x * x).sum::<f64>() > 1e-2);
        let g = Graph::new();
        let vs = g.variables(&xs).unwrap();
        let grad = g.backward(Var::l2_norm(&vs), &vs).unwrap();
        let fd = finite_difference_gradient(f64::l2_norm, &xs, 1e-6).unwrap();
        for (x, y) in grad.iter().zip(&fd) {
            prop_assert!(close(*x, *y, 1e-5));
        }
    }

    #[test]
    fn backward_is_linear(a in -3.0f64..3.0, b in -3.0f64..3.0, x in -2.0f64..2.0, y in -2.0f64..2.0) {
        let g = Graph::new();
        let (vx, vy) = (g.variable(x).unwrap(), g.variable(y).unwrap());
        let u = vx.sin() * vy;
        let v = vx.exp() + vy * vy;
        let combo = u.scale(a) + v.scale(b);
        let gu = g.backward(u, &[vx, vy]).unwrap();
        let gv = g.backward(v, &[vx, vy]).unwrap();
        let gc = g.backward(combo, &[vx, vy]).unwrap();
        for i in 0..2 {
            let expected = a * gu[i] + b * gv[i];
            prop_assert!((gc[i] - expected).abs() <= 1e-12 * expected.abs().max(1.0));
        }
    }
}
