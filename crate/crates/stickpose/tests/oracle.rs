//! Oracle tests: the library's fast paths against independent scalar
//! references, plus finite-difference spot checks.

mod common;

use common::{max_abs_diff, naive_conv2d, scalar_gru_1x1, seeded_tensor};
use proptest::prelude::*;
use stickpose::gradcheck::gradcheck;
use stickpose::graph::PoseGraph;
use stickpose::pgnn::{gru_update, heatmap_loss, mrf_marginal, PgnnMode, PgnnModel};
use stickpose::tape::{ConvSpec, Tape};
use stickpose::tensor::Tensor;

fn tape_conv(input: &Tensor, kernel: &Tensor, bias: &[f64], spec: ConvSpec) -> Tensor {
    let mut tape = Tape::new();
    let x = tape.leaf(input.clone(), false);
    let k = tape.leaf(kernel.clone(), false);
    let b = tape.leaf(Tensor::new(vec![bias.len()], bias.to_vec()).unwrap(), false);
    let y = tape.conv2d(x, k, b, spec).unwrap();
    tape.value(y).clone()
}

#[test]
fn conv_matches_naive_oracle_across_geometry_grid() {
    let mut cases = 0;
    for &k in &[1usize, 3, 5] {
        for &stride in &[1usize, 2] {
            for &padding in &[0usize, 1, 2] {
                for &dilation in &[1usize, 2] {
                    let spec = ConvSpec::new(stride, padding, dilation);
                    let (h, w) = (7, 6);
                    if spec.out_size(h, k).is_none() || spec.out_size(w, k).is_none() {
                        continue;
                    }
                    let input = seeded_tensor(&[2, 3, h, w], 11 + cases, -1.0, 1.0);
                    let kernel = seeded_tensor(&[4, 3, k, k], 31 + cases, -1.0, 1.0);
                    let bias: Vec<f64> = (0..4).map(|i| 0.1 * i as f64 - 0.15).collect();
                    let fast = tape_conv(&input, &kernel, &bias, spec);
                    let slow = naive_conv2d(&input, &kernel, &bias, spec);
                    assert_eq!(fast.shape(), slow.shape(), "k{k} s{stride} p{padding} d{dilation}");
                    let diff = max_abs_diff(fast.data(), slow.data());
                    assert!(diff < 1e-12, "k{k} s{stride} p{padding} d{dilation}: {diff:e}");
                    cases += 1;
                }
            }
        }
    }
    assert!(cases > 20, "grid unexpectedly small: {cases}");
}

#[test]
fn conv_dilated_5x5_case_from_contract() {
    // random 1x1x5x5 input, 3x3 kernel, dilation 2, padding 2
    let input = seeded_tensor(&[1, 1, 5, 5], 77, -1.0, 1.0);
    let kernel = seeded_tensor(&[1, 1, 3, 3], 78, -1.0, 1.0);
    let spec = ConvSpec::new(1, 2, 2);
    let fast = tape_conv(&input, &kernel, &[0.0], spec);
    let slow = naive_conv2d(&input, &kernel, &[0.0], spec);
    assert!(max_abs_diff(fast.data(), slow.data()) < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn conv_equals_oracle_on_random_geometry(
        seed in 0u64..1000,
        k in 1usize..=5,
        stride in 1usize..=3,
        padding in 0usize..=2,
        dilation in 1usize..=2,
        h in 3usize..=9,
        w in 3usize..=9,
    ) {
        let spec = ConvSpec::new(stride, padding, dilation);
        prop_assume!(k % 2 == 1);
        prop_assume!(spec.out_size(h, k).is_some() && spec.out_size(w, k).is_some());
        let input = seeded_tensor(&[1, 2, h, w], seed, -1.0, 1.0);
        let kernel = seeded_tensor(&[2, 2, k, k], seed + 1, -1.0, 1.0);
        let fast = tape_conv(&input, &kernel, &[0.25, -0.5], spec);
        let slow = naive_conv2d(&input, &kernel, &[0.25, -0.5], spec);
        prop_assert!(max_abs_diff(fast.data(), slow.data()) < 1e-12);
    }

    #[test]
    fn grad_of_hadamard_sum_is_other_factor(seed in 0u64..1000) {
        let a = seeded_tensor(&[12], seed, -2.0, 2.0);
        let b = seeded_tensor(&[12], seed + 7, -2.0, 2.0);
        let mut tape = Tape::new();
        let va = tape.leaf(a, true);
        let vb = tape.leaf(b.clone(), false);
        let prod = tape.mul(va, vb).unwrap();
        let s = tape.sum(prod).unwrap();
        tape.backward(s).unwrap();
        let g = tape.grad(va).unwrap();
        prop_assert!(max_abs_diff(g.data(), b.data()) == 0.0);
    }

    #[test]
    fn sum_sq_diff_matches_scalar_loop(seed in 0u64..1000) {
        let a = seeded_tensor(&[3, 5], seed, -3.0, 3.0);
        let b = seeded_tensor(&[3, 5], seed + 3, -3.0, 3.0);
        let mut expect = 0.0;
        for (x, y) in a.data().iter().zip(b.data()) {
            expect += (x - y) * (x - y);
        }
        let mut tape = Tape::new();
        let va = tape.leaf(a, false);
        let vb = tape.leaf(b, false);
        let s = tape.sum_sq_diff(va, vb).unwrap();
        prop_assert!((tape.value(s).item() - expect).abs() < 1e-12);
    }
}

#[test]
fn fd_spot_checks_pass_at_contract_tolerance() {
    let x = seeded_tensor(&[8], 5, -1.5, 1.5);
    let r = gradcheck(
        "sigmoid chain",
        |t, v| {
            let a = t.sigmoid(v[0])?;
            let b = t.tanh(a)?;
            t.sum(b)
        },
        &[x],
        1e-5,
        1e-4,
    )
    .unwrap();
    assert!(r.passed(), "{r}");

    let input = seeded_tensor(&[1, 1, 6, 6], 6, -1.0, 1.0);
    let kernel = seeded_tensor(&[1, 1, 3, 3], 7, -1.0, 1.0);
    let bias = Tensor::zeros(&[1]);
    let spec = ConvSpec::new(1, 2, 2);
    let r = gradcheck(
        "conv dilation 2",
        move |t, v| {
            let c = t.conv2d(v[0], v[1], v[2], spec)?;
            t.sum(c)
        },
        &[input, kernel, bias],
        1e-5,
        1e-4,
    )
    .unwrap();
    assert!(r.passed(), "{r}");
}

#[test]
fn gru_matches_scalar_reference_with_1x1_kernels() {
    // random 1x1 kernels on 2x2 maps: each cell is an independent scalar GRU
    let vals = seeded_tensor(&[9], 21, -0.9, 0.9);
    let v = vals.data();
    let (w_z, u_z, b_z, w_r, u_r, b_r, w_h, u_h, b_h) =
        (v[0], v[1], v[2], v[3], v[4], v[5], v[6], v[7], v[8]);
    let h = seeded_tensor(&[1, 1, 2, 2], 22, -1.0, 1.0);
    let x = seeded_tensor(&[1, 1, 2, 2], 23, -1.0, 1.0);

    let expect = scalar_gru_1x1(h.data(), x.data(), w_z, u_z, b_z, w_r, u_r, b_r, w_h, u_h, b_h);

    let mut model = PgnnModel::new(PoseGraph::chain(2), 1, 1, 1, PgnnMode::Gru, 0);
    model.gates[0] = stickpose::pgnn::GateParams {
        w_z: Tensor::new(vec![1, 1, 1, 1], vec![w_z]).unwrap(),
        u_z: Tensor::new(vec![1, 1, 1, 1], vec![u_z]).unwrap(),
        b_z: Tensor::new(vec![1], vec![b_z]).unwrap(),
        w_r: Tensor::new(vec![1, 1, 1, 1], vec![w_r]).unwrap(),
        u_r: Tensor::new(vec![1, 1, 1, 1], vec![u_r]).unwrap(),
        b_r: Tensor::new(vec![1], vec![b_r]).unwrap(),
        w_h: Tensor::new(vec![1, 1, 1, 1], vec![w_h]).unwrap(),
        u_h: Tensor::new(vec![1, 1, 1, 1], vec![u_h]).unwrap(),
        b_h: Tensor::new(vec![1], vec![b_h]).unwrap(),
    };
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape, false);
    let hv = tape.leaf(h, false);
    let xv = tape.leaf(x, false);
    let out = gru_update(&mut tape, &bound.gates[0], hv, xv, bound.zero_bias(), 1).unwrap();
    assert!(max_abs_diff(tape.value(out).data(), &expect) < 1e-12);
}

#[test]
fn propagate_t1_matches_whole_computation_scalar_oracle() {
    // 2-node graph, hand-set 1x1 kernels, 2x2 maps, T = 1: compute the whole
    // refined output with plain scalar arithmetic
    let graph = PoseGraph::chain(2);
    let mut model = PgnnModel::new(graph, 1, 1, 1, PgnnMode::Gru, 0);
    let edge_w = [0.8, -0.6]; // kernels for directed edges (0,1) then (1,0)
    let edge_b = [0.05, -0.1];
    for (i, e) in model.edges.iter_mut().enumerate() {
        e.kernel = Tensor::new(vec![1, 1, 1, 1], vec![edge_w[i]]).unwrap();
        e.bias = Tensor::new(vec![1], vec![edge_b[i]]).unwrap();
    }
    let gate_vals = seeded_tensor(&[18], 40, -0.8, 0.8);
    let gv = gate_vals.data();
    for (k, g) in model.gates.iter_mut().enumerate() {
        let o = k * 9;
        *g = stickpose::pgnn::GateParams {
            w_z: Tensor::new(vec![1, 1, 1, 1], vec![gv[o]]).unwrap(),
            u_z: Tensor::new(vec![1, 1, 1, 1], vec![gv[o + 1]]).unwrap(),
            b_z: Tensor::new(vec![1], vec![gv[o + 2]]).unwrap(),
            w_r: Tensor::new(vec![1, 1, 1, 1], vec![gv[o + 3]]).unwrap(),
            u_r: Tensor::new(vec![1, 1, 1, 1], vec![gv[o + 4]]).unwrap(),
            b_r: Tensor::new(vec![1], vec![gv[o + 5]]).unwrap(),
            w_h: Tensor::new(vec![1, 1, 1, 1], vec![gv[o + 6]]).unwrap(),
            u_h: Tensor::new(vec![1, 1, 1, 1], vec![gv[o + 7]]).unwrap(),
            b_h: Tensor::new(vec![1], vec![gv[o + 8]]).unwrap(),
        };
    }
    let unary = seeded_tensor(&[1, 2, 2, 2], 41, -1.0, 1.0);

    // scalar route: directed edge list is [(0,1), (1,0)], so node 1 hears
    // from node 0 through edge 0 and node 0 hears from node 1 through edge 1
    let h0: Vec<f64> = unary.data()[0..4].to_vec();
    let h1: Vec<f64> = unary.data()[4..8].to_vec();
    let msg_to_0: Vec<f64> = h1.iter().map(|v| edge_w[1] * v + edge_b[1]).collect();
    let msg_to_1: Vec<f64> = h0.iter().map(|v| edge_w[0] * v + edge_b[0]).collect();
    let new_0 = scalar_gru_1x1(
        &h0, &msg_to_0, gv[0], gv[1], gv[2], gv[3], gv[4], gv[5], gv[6], gv[7], gv[8],
    );
    let new_1 = scalar_gru_1x1(
        &h1, &msg_to_1, gv[9], gv[10], gv[11], gv[12], gv[13], gv[14], gv[15], gv[16], gv[17],
    );
    let mut expect: Vec<f64> = Vec::new();
    expect.extend(new_0.iter().zip(&h0).map(|(a, b)| a + b));
    expect.extend(new_1.iter().zip(&h1).map(|(a, b)| a + b));

    let mut tape = Tape::new();
    let bound = model.bind(&mut tape, false);
    let u = tape.leaf(unary, false);
    let out = model.propagate(&mut tape, &bound, u).unwrap();
    assert!(max_abs_diff(tape.value(out).data(), &expect) < 1e-12);
}

#[test]
fn mrf_mode_equals_brute_force_marginal_on_chain() {
    // 3-node chain, 4x4 maps, T = 1: the product-aggregation network route
    // must match the direct marginal computation
    let graph = PoseGraph::chain(3);
    let mut model = PgnnModel::new(graph.clone(), 3, 3, 1, PgnnMode::Mrf, 5);
    // nonnegative unary, normalized per node
    let mut unary = seeded_tensor(&[3, 4, 4], 50, 0.05, 1.0);
    for k in 0..3 {
        let plane = &mut unary.data_mut()[k * 16..(k + 1) * 16];
        let z: f64 = plane.iter().sum();
        for v in plane.iter_mut() {
            *v /= z;
        }
    }
    for e in &mut model.edges {
        e.bias = Tensor::new(vec![1], vec![0.01]).unwrap();
    }

    let oracle = mrf_marginal(&graph, &unary, &model.edges).unwrap();

    let mut tape = Tape::new();
    let bound = model.bind(&mut tape, false);
    let u4 = Tensor::new(vec![1, 3, 4, 4], unary.data().to_vec()).unwrap();
    let uv = tape.leaf(u4, false);
    let out = model.propagate(&mut tape, &bound, uv).unwrap();
    let diff = max_abs_diff(tape.value(out).data(), oracle.data());
    assert!(diff < 1e-10, "mrf routes disagree by {diff:e}");
}

#[test]
fn wide_hidden_state_gradients_pass_fd() {
    // hidden width 2: the lift and projection convs participate in the
    // gradient flow and must check out like everything else
    let graph = PoseGraph::chain(2);
    let pgnn = PgnnModel::with_hidden_channels(graph, 3, 3, 1, PgnnMode::Gru, 2, 13);
    let unary = seeded_tensor(&[1, 2, 4, 4], 80, -1.0, 1.0);
    let gt = seeded_tensor(&[1, 2, 4, 4], 81, -1.0, 1.0);
    let params: Vec<Tensor> = pgnn.named_params().iter().map(|(_, t)| (*t).clone()).collect();
    let r = gradcheck(
        "pgnn wide hidden state",
        move |t, v| {
            let bound = stickpose::pgnn::BoundPgnn::from_vars(&pgnn, v, t)?;
            let u = t.leaf(unary.clone(), false);
            let out = pgnn.propagate(t, &bound, u)?;
            let g = t.leaf(gt.clone(), false);
            heatmap_loss(t, out, g)
        },
        &params,
        1e-5,
        1e-4,
    )
    .unwrap();
    assert!(r.passed(), "{r}");
}

#[test]
fn unary_channels_reach_states_bit_exact_through_model() {
    // pipeline identity: h^0 equals the backbone prediction channel
    use stickpose::model::{ModelConfig, PoseModel};
    let cfg = ModelConfig {
        num_joints: 3,
        map_h: 6,
        map_w: 6,
        stages: 2,
        width: 4,
        steps: 0,
        graph: stickpose::graph::GraphKind::Custom,
        ..ModelConfig::default()
    };
    let model = PoseModel::new(&cfg).unwrap();
    let image = seeded_tensor(&[1, 1, 12, 12], 60, 0.0, 1.0);
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape, false);
    let img = tape.leaf(image, false);
    let out = model.forward(&mut tape, &bound, img).unwrap();
    let unary = *out.stage_preds.last().unwrap();
    let states = model.pgnn.init_states(&mut tape, &bound.pgnn, unary).unwrap();
    for (k, &s) in states.iter().enumerate() {
        let expect: Vec<f64> =
            tape.value(unary).data()[k * 36..(k + 1) * 36].to_vec();
        assert_eq!(tape.value(s).data(), &expect[..]);
    }
}

#[test]
fn loss_matches_scalar_loop_on_random_maps() {
    let pred = seeded_tensor(&[1, 5, 4, 4], 70, -1.0, 1.0);
    let gt = seeded_tensor(&[1, 5, 4, 4], 71, -1.0, 1.0);
    let mut expect = 0.0;
    for (a, b) in pred.data().iter().zip(gt.data()) {
        expect += (a - b) * (a - b);
    }
    expect /= 5.0;
    let mut tape = Tape::new();
    let p = tape.leaf(pred, false);
    let g = tape.leaf(gt, false);
    let l = heatmap_loss(&mut tape, p, g).unwrap();
    assert!((tape.value(l).item() - expect).abs() < 1e-12);
}
