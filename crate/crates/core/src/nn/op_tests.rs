use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::gradcheck::{numeric_input_gradient, relative_error};
use super::*;
use crate::error::Result;

type Op = dyn Fn(&mut Tape<'_, f64>, &[Var]) -> Result<Var>;

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], positive: bool) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| if positive { rng.gen_range(0.5..2.0) } else { rng.gen_range(-1.5..1.5) })
        .collect();
    Tensor::new(shape, data).unwrap()
}

/// Loss `sum(op(inputs) * weights)` with fixed random weights.
fn weighted_loss(inputs: &[Tensor<f64>], weights: &Tensor<f64>, op: &Op) -> Result<f64> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
    let out = op(&mut tape, &vars)?;
    Ok(tape.value(out).data().iter().zip(weights.data()).map(|(a, b)| a * b).sum())
}

fn worst_op_error(seed: u64, shapes: &[Vec<usize>], positive: bool, op: &Op) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inputs: Vec<Tensor<f64>> = shapes.iter().map(|s| random_tensor(&mut rng, s, positive)).collect();
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.input(t.clone())).collect();
    let out = op(&mut tape, &vars).unwrap();
    let weights = random_tensor(&mut rng, tape.shape(out), false);
    let grads = tape.backward_from(out, weights.clone()).unwrap();

    let mut worst: f64 = 0.0;
    for (k, v) in vars.iter().enumerate() {
        let analytic = grads.wrt(*v).cloned().unwrap_or_else(|| Tensor::zeros(inputs[k].shape()));
        let numeric = numeric_input_gradient(&inputs[k], 1e-4, |t| {
            let mut perturbed = inputs.clone();
            perturbed[k] = t.clone();
            weighted_loss(&perturbed, &weights, op)
        })
        .unwrap();
        worst = worst.max(relative_error(analytic.data(), &numeric));
    }
    worst
}

fn assert_op(name: &str, shapes: &[&[Vec<usize>]], positive: bool, op: &Op) {
    assert!(shapes.len() >= 3, "each op is checked on at least three shapes");
    for (i, s) in shapes.iter().enumerate() {
        let err = worst_op_error(i as u64 + 11, s, positive, op);
        assert!(err < 1e-3, "{name} shape set {i}: relative error {err}");
    }
}

fn same(shapes: &[usize], arity: usize) -> Vec<Vec<usize>> {
    vec![shapes.to_vec(); arity]
}

#[test]
fn elementwise_ops_match_finite_differences() {
    let sets = [same(&[3], 2), same(&[2, 5], 2), same(&[4, 1, 3], 2)];
    let sets: Vec<&[Vec<usize>]> = sets.iter().map(|s| s.as_slice()).collect();
    assert_op("add", &sets, false, &|t, v| t.add(v[0], v[1]));
    assert_op("sub", &sets, false, &|t, v| t.sub(v[0], v[1]));
    assert_op("mul", &sets, false, &|t, v| t.mul(v[0], v[1]));
    assert_op("div", &sets, true, &|t, v| t.div(v[0], v[1]));
    assert_op("minimum", &sets, false, &|t, v| t.minimum(v[0], v[1]));
}

#[test]
fn unary_ops_match_finite_differences() {
    let sets = [same(&[4], 1), same(&[3, 3], 1), same(&[2, 2, 5], 1)];
    let sets: Vec<&[Vec<usize>]> = sets.iter().map(|s| s.as_slice()).collect();
    assert_op("relu", &sets, false, &|t, v| Ok(t.relu(v[0])));
    assert_op("tanh", &sets, false, &|t, v| Ok(t.tanh(v[0])));
    assert_op("sigmoid", &sets, false, &|t, v| Ok(t.sigmoid(v[0])));
    assert_op("softplus", &sets, false, &|t, v| Ok(t.softplus(v[0])));
    assert_op("exp", &sets, false, &|t, v| Ok(t.exp(v[0])));
    assert_op("ln", &sets, true, &|t, v| Ok(t.ln(v[0])));
    assert_op("square", &sets, false, &|t, v| Ok(t.square(v[0])));
    assert_op("scale", &sets, false, &|t, v| Ok(t.scale(v[0], -2.5)));
    assert_op("add_scalar", &sets, false, &|t, v| Ok(t.add_scalar(v[0], 0.7)));
    assert_op("clamp", &sets, false, &|t, v| Ok(t.clamp(v[0], -0.5, 0.9)));
    assert_op("sum_all", &sets, false, &|t, v| Ok(t.sum_all(v[0])));
    assert_op("mean_all", &sets, false, &|t, v| Ok(t.mean_all(v[0])));
}

#[test]
fn structural_ops_match_finite_differences() {
    let mm = [
        vec![vec![1, 3], vec![3, 2]],
        vec![vec![4, 5], vec![5, 3]],
        vec![vec![2, 1], vec![1, 6]],
    ];
    let mm: Vec<&[Vec<usize>]> = mm.iter().map(|s| s.as_slice()).collect();
    assert_op("matmul", &mm, false, &|t, v| t.matmul(v[0], v[1]));

    let bias = [vec![vec![1, 3], vec![3]], vec![vec![4, 2], vec![2]], vec![vec![2, 6], vec![6]]];
    let bias: Vec<&[Vec<usize>]> = bias.iter().map(|s| s.as_slice()).collect();
    assert_op("add_bias", &bias, false, &|t, v| t.add_bias(v[0], v[1]));

    let cat = [
        vec![vec![1, 2], vec![1, 3]],
        vec![vec![3, 1], vec![3, 4]],
        vec![vec![2, 5], vec![2, 2]],
    ];
    let cat: Vec<&[Vec<usize>]> = cat.iter().map(|s| s.as_slice()).collect();
    assert_op("concat_cols", &cat, false, &|t, v| t.concat_cols(&[v[0], v[1], v[0]]));

    let two_d = [same(&[2, 4], 1), same(&[3, 6], 1), same(&[1, 5], 1)];
    let two_d: Vec<&[Vec<usize>]> = two_d.iter().map(|s| s.as_slice()).collect();
    assert_op("slice_cols", &two_d, false, &|t, v| t.slice_cols(v[0], 1, 2));
    assert_op("sum_rows", &two_d, false, &|t, v| Ok(t.sum_rows(v[0])));
    assert_op("reshape", &two_d, false, &|t, v| {
        let n = t.value(v[0]).len();
        t.reshape(v[0], &[n])
    });
}

#[test]
fn conv2d_matches_finite_differences() {
    let cases: [(Vec<usize>, Vec<usize>, usize, usize); 4] = [
        (vec![1, 2, 8, 8], vec![3, 2, 3, 3], 1, 1),
        (vec![2, 1, 7, 6], vec![2, 1, 3, 3], 2, 0),
        (vec![1, 3, 9, 9], vec![2, 3, 5, 5], 2, 2),
        (vec![2, 2, 6, 6], vec![4, 2, 1, 1], 1, 0),
    ];
    for (i, (xs, ws, stride, pad)) in cases.into_iter().enumerate() {
        let o = ws[0];
        let shapes = vec![xs, ws, vec![o]];
        let err = worst_op_error(100 + i as u64, &shapes, false, &move |t, v| {
            t.conv2d(v[0], v[1], Some(v[2]), stride, pad)
        });
        assert!(err < 1e-3, "conv case {i}: relative error {err}");
    }
}

#[test]
fn conv2d_sums_ones() {
    let mut tape = Tape::<f32>::new();
    let x = tape.constant(Tensor::full(&[1, 1, 4, 4], 1.0));
    let w = tape.constant(Tensor::full(&[1, 1, 3, 3], 1.0));
    let y = tape.conv2d(x, w, None, 1, 0).unwrap();
    assert_eq!(tape.shape(y), &[1, 1, 2, 2]);
    assert!(tape.value(y).data().iter().all(|&v| v == 9.0));
}

#[test]
fn conv2d_output_size_and_errors() {
    assert_eq!(conv_out_size(32, 3, 2, 0), 15);
    let mut tape = Tape::<f32>::new();
    let x = tape.constant(Tensor::zeros(&[1, 1, 32, 32]));
    let w = tape.constant(Tensor::zeros(&[1, 1, 3, 3]));
    let y = tape.conv2d(x, w, None, 2, 0).unwrap();
    assert_eq!(tape.shape(y), &[1, 1, 15, 15]);

    let bad_channels = tape.constant(Tensor::zeros(&[1, 2, 3, 3]));
    let err = tape.conv2d(x, bad_channels, None, 1, 0).unwrap_err();
    assert!(err.to_string().contains("[1, 1, 32, 32]"), "{err}");
    let too_big = tape.constant(Tensor::zeros(&[1, 1, 40, 40]));
    assert!(tape.conv2d(x, too_big, None, 1, 0).is_err());
    assert!(tape.conv2d(x, w, None, 3, 0).is_err());
}

fn lstm_weights(rng: &mut ChaCha8Rng, inputs: usize, width: usize, scale: f64) -> [Tensor<f64>; 3] {
    let mut t = |shape: &[usize]| {
        let n: usize = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.gen_range(-scale..scale)).collect()).unwrap()
    };
    [t(&[inputs, 4 * width]), t(&[width, 4 * width]), t(&[4 * width])]
}

#[test]
fn lstm_zero_weights_give_zero_state() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(Tensor::zeros(&[2, 3]));
    let h = tape.constant(Tensor::zeros(&[2, 4]));
    let c = tape.constant(Tensor::zeros(&[2, 4]));
    let wx = tape.constant(Tensor::zeros(&[3, 16]));
    let wh = tape.constant(Tensor::zeros(&[4, 16]));
    let b = tape.constant(Tensor::zeros(&[16]));
    let (h1, c1) = lstm_cell(&mut tape, x, h, c, wx, wh, b, 4).unwrap();
    assert!(tape.value(h1).data().iter().all(|&v| v == 0.0));
    assert!(tape.value(c1).data().iter().all(|&v| v == 0.0));
}

#[test]
fn lstm_single_unit_matches_hand_evaluation() {
    // Gate pre-activations: i = 0.5x + 0.1h + 0.0, f = -0.3x + 0.2h + 1.0,
    // g = 0.8x - 0.4h + 0.1, o = 0.1x + 0.3h - 0.2.
    let wx = Tensor::from_f64(&[1, 4], &[0.5, -0.3, 0.8, 0.1]).unwrap();
    let wh = Tensor::from_f64(&[1, 4], &[0.1, 0.2, -0.4, 0.3]).unwrap();
    let b = Tensor::from_f64(&[4], &[0.0, 1.0, 0.1, -0.2]).unwrap();
    let (x, h0, c0) = (0.7, -0.2, 0.4);

    let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
    let i = sig(0.5 * x + 0.1 * h0);
    let f = sig(-0.3 * x + 0.2 * h0 + 1.0);
    let g = (0.8 * x - 0.4 * h0 + 0.1).tanh();
    let o = sig(0.1 * x + 0.3 * h0 - 0.2);
    let c_expected = f * c0 + i * g;
    let h_expected = o * c_expected.tanh();

    let mut tape = Tape::<f64>::new();
    let vx = tape.constant(Tensor::scalar(x).reshaped(&[1, 1]).unwrap());
    let vh = tape.constant(Tensor::scalar(h0).reshaped(&[1, 1]).unwrap());
    let vc = tape.constant(Tensor::scalar(c0).reshaped(&[1, 1]).unwrap());
    let (vwx, vwh, vb) = (tape.constant(wx), tape.constant(wh), tape.constant(b));
    let (h1, c1) = lstm_cell(&mut tape, vx, vh, vc, vwx, vwh, vb, 1).unwrap();
    assert!((tape.value(h1).data()[0] - h_expected).abs() < 1e-6);
    assert!((tape.value(c1).data()[0] - c_expected).abs() < 1e-6);
}

#[test]
fn three_chained_lstm_cells_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let (n, d, w) = (2, 3, 4);
    let [wx, wh, b] = lstm_weights(&mut rng, d, w, 0.6);
    let xs: Vec<Tensor<f64>> = (0..3).map(|_| random_tensor(&mut rng, &[n, d], false)).collect();
    let op = move |t: &mut Tape<'_, f64>, v: &[Var]| -> Result<Var> {
        let mut h = t.constant(Tensor::zeros(&[n, w]));
        let mut c = t.constant(Tensor::zeros(&[n, w]));
        for x in &xs {
            let xv = t.constant(x.clone());
            let (h1, c1) = lstm_cell(t, xv, h, c, v[0], v[1], v[2], w)?;
            h = h1;
            c = c1;
        }
        Ok(h)
    };
    let inputs = [wx, wh, b];
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.input(t.clone())).collect();
    let out = op(&mut tape, &vars).unwrap();
    let weights = random_tensor(&mut rng, tape.shape(out), false);
    let grads = tape.backward_from(out, weights.clone()).unwrap();
    for (k, v) in vars.iter().enumerate() {
        let numeric = numeric_input_gradient(&inputs[k], 1e-4, |t| {
            let mut p = inputs.clone();
            p[k] = t.clone();
            weighted_loss(&p, &weights, &op)
        })
        .unwrap();
        let err = relative_error(grads.wrt(*v).unwrap().data(), &numeric);
        assert!(err < 1e-3, "lstm input {k}: {err}");
    }
}

#[test]
fn forward_is_deterministic_for_a_seed() {
    let build = || {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut ps = ParameterSet::<f32>::new();
        let conv = Conv2d::new(&mut ps, "c", 2, 4, 3, 2, 1, &mut rng).unwrap();
        let x = random_tensor(&mut rng, &[2, 2, 8, 8], false).cast::<f32>();
        let mut tape = Tape::with_params(&ps);
        let xv = tape.constant(x);
        let y = conv.forward(&mut tape, xv).unwrap();
        tape.value(y).clone()
    };
    assert_eq!(build(), build());
}

#[test]
fn constants_receive_no_gradient() {
    let mut tape = Tape::<f64>::new();
    let a = tape.constant(Tensor::full(&[2], 3.0));
    let b = tape.input(Tensor::full(&[2], 2.0));
    let p = tape.mul(a, b).unwrap();
    let loss = tape.sum_all(p);
    let g = tape.backward(loss).unwrap();
    assert!(g.wrt(a).is_none());
    assert_eq!(g.wrt(b).unwrap().data(), &[3.0, 3.0]);
}
