use faqsearch_core::numerics::{grad_check, layer_norm, matmul, softmax_rows, ParamSet, Tape, Tensor, Var, LAYER_NORM_EPS};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-5;
const PRIMITIVE_TOL: f64 = 1e-6;

fn random(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-scale..scale)).collect()).unwrap()
}

/// Reduces `out` to a scalar through fixed random weights so every output
/// element contributes a distinct amount.
fn project(tape: &mut Tape, out: Var, seed: u64) -> Var {
    let shape = tape.value(out).shape().to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = tape.constant(random(&mut rng, &shape, 1.0));
    let prod = tape.mul(out, w);
    tape.sum(prod)
}

fn check(name: &str, shapes: &[&[usize]], f: impl for<'p> Fn(&mut Tape<'p>, &[Var]) -> Var) {
    let mut rng = ChaCha8Rng::seed_from_u64(name.len() as u64 * 7919);
    let mut params = ParamSet::new();
    let ids: Vec<_> = shapes
        .iter()
        .enumerate()
        .map(|(i, s)| params.insert(format!("p{i}"), random(&mut rng, s, 1.0)).unwrap())
        .collect();
    let report = grad_check(
        &params,
        |tape| {
            let vars: Vec<Var> = ids.iter().map(|&id| tape.param(id)).collect();
            let out = f(tape, &vars);
            if tape.value(out).is_scalar() {
                out
            } else {
                project(tape, out, 99)
            }
        },
        H,
        None,
    )
    .unwrap();
    assert!(
        report.max_rel_error < PRIMITIVE_TOL,
        "{name}: relative error {} at {:?}",
        report.max_rel_error,
        report.worst
    );
}

#[test]
fn grad_matmul_add_sub_mul() {
    check("matmul", &[&[3, 4], &[4, 2]], |t, v| t.matmul(v[0], v[1]));
    check("add", &[&[2, 3], &[2, 3]], |t, v| t.add(v[0], v[1]));
    check("sub", &[&[2, 3], &[2, 3]], |t, v| t.sub(v[0], v[1]));
    check("mul", &[&[2, 3], &[2, 3]], |t, v| t.mul(v[0], v[1]));
    check("add_row", &[&[3, 4], &[1, 4]], |t, v| t.add_row(v[0], v[1]));
}

#[test]
fn grad_elementwise() {
    check("affine", &[&[2, 3]], |t, v| t.affine(v[0], 1.7, -0.3));
    check("scale", &[&[2, 3]], |t, v| t.scale(v[0], -2.5));
    check("one_minus", &[&[2, 3]], |t, v| t.one_minus(v[0]));
    check("sigmoid", &[&[2, 3]], |t, v| t.sigmoid(v[0]));
    check("tanh", &[&[2, 3]], |t, v| t.tanh(v[0]));
    check("relu", &[&[3, 5]], |t, v| t.relu(v[0]));
}

#[test]
fn grad_normalizations() {
    check("softmax_rows", &[&[3, 5]], |t, v| t.softmax_rows(v[0]));
    check("layer_norm", &[&[3, 5], &[1, 5], &[1, 5]], |t, v| t.layer_norm(v[0], v[1], v[2], LAYER_NORM_EPS));
}

#[test]
fn grad_structural() {
    check("concat_cols", &[&[3, 2], &[3, 4]], |t, v| t.concat_cols(&[v[0], v[1]]));
    check("concat_rows", &[&[2, 3], &[4, 3]], |t, v| t.concat_rows(&[v[0], v[1]]));
    check("slice", &[&[4, 5]], |t, v| t.slice(v[0], 1..3, 2..5));
    check("row", &[&[4, 5]], |t, v| t.row(v[0], 2));
    check("transpose", &[&[3, 4]], |t, v| t.transpose(v[0]));
    check("reshape", &[&[3, 4]], |t, v| t.reshape(v[0], &[2, 6]));
    check("reverse_rows", &[&[4, 3]], |t, v| t.reverse_rows(v[0]));
    check("gather", &[&[5, 3]], |t, v| t.gather(v[0], vec![Some(4), None, Some(1), Some(4)]));
    check("max_over_rows", &[&[5, 3]], |t, v| t.max_over_rows(v[0]));
}

#[test]
fn grad_reductions() {
    check("sum", &[&[3, 4]], |t, v| t.sum(v[0]));
    check("mean", &[&[3, 4]], |t, v| t.mean(v[0]));
    check("add_all", &[&[2, 3], &[2, 3], &[2, 3]], |t, v| t.add_all(v));
    check("cosine", &[&[1, 6], &[1, 6]], |t, v| t.cosine(v[0], v[1]));
}

#[test]
fn grad_gated_average() {
    check("gated_average", &[&[5, 3], &[5, 3]], |t, v| {
        let f = t.sigmoid(v[0]);
        t.gated_average(f, v[1])
    });
}

#[test]
fn grad_losses() {
    check("bce_pos", &[&[1, 1]], |t, v| {
        let p = t.sigmoid(v[0]);
        t.bce(p, 1.0)
    });
    check("bce_neg", &[&[1, 1]], |t, v| {
        let p = t.sigmoid(v[0]);
        t.bce(p, 0.0)
    });
    check("softmax_xent", &[&[1, 6]], |t, v| t.softmax_cross_entropy(v[0], 4));
}

#[test]
fn frozen_params_still_receive_gradients() {
    let mut params = ParamSet::new();
    let a = params.insert_frozen("a", Tensor::vector(vec![2.0, -1.0])).unwrap();
    let mut tape = Tape::new(&params);
    let x = tape.param(a);
    let s = tape.sum(x);
    let g = tape.backward(s).unwrap();
    assert_eq!(g.get(a).data(), &[1.0, 1.0]);
    assert!(!params.is_trainable(a));
}

#[test]
fn matmul_shape_error() {
    let a = Tensor::zeros(&[2, 3]);
    let b = Tensor::zeros(&[2, 3]);
    assert!(matmul(&a, &b).is_err());
}

fn row_strategy() -> impl Strategy<Value = (usize, usize, Vec<f64>)> {
    (1usize..6, 2usize..9).prop_flat_map(|(r, c)| (Just(r), Just(c), prop::collection::vec(-30.0f64..30.0, r * c)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn softmax_rows_sum_to_one((r, c, data) in row_strategy()) {
        let y = softmax_rows(&Tensor::matrix(r, c, data).unwrap());
        for i in 0..r {
            let s: f64 = y.row(i).iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-9);
            prop_assert!(y.row(i).iter().all(|&p| (0.0..=1.0).contains(&p)));
        }
    }

    #[test]
    fn layer_norm_rows_are_standardized((r, c, data) in row_strategy()) {
        let x = Tensor::matrix(r, c, data).unwrap();
        let ones = Tensor::filled(&[1, c], 1.0);
        let zeros = Tensor::zeros(&[1, c]);
        let y = layer_norm(&x, &ones, &zeros, LAYER_NORM_EPS).unwrap();
        for i in 0..r {
            let row = x.row(i);
            let m = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / c as f64;
            prop_assume!(var > 1e-4);
            let out = y.row(i);
            let mu = out.iter().sum::<f64>() / c as f64;
            let s2 = out.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / c as f64;
            prop_assert!(mu.abs() < 1e-8, "mean {mu}");
            prop_assert!((s2 - 1.0).abs() < 1e-6, "variance {s2}");
        }
    }

    #[test]
    fn gated_average_matches_recurrence(data in prop::collection::vec(-3.0f64..3.0, 24)) {
        let params = ParamSet::new();
        let mut tape = Tape::new(&params);
        let gate = Tensor::matrix(4, 3, data[..12].iter().map(|z| 1.0 / (1.0 + (-z).exp())).collect()).unwrap();
        let cand = Tensor::matrix(4, 3, data[12..].to_vec()).unwrap();
        let (g, c) = (tape.constant(gate.clone()), tape.constant(cand.clone()));
        let h = tape.gated_average(g, c);
        let h = tape.value(h);
        let mut prev = [0.0; 3];
        for t in 0..4 {
            for j in 0..3 {
                let f = gate.at(t, j);
                let want = (1.0 - f) * cand.at(t, j) + f * prev[j];
                prop_assert_eq!(h.at(t, j), want);
                prev[j] = want;
            }
        }
    }
}
