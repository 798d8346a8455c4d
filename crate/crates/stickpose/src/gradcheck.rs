//! Finite-difference verification of tape gradients.
//!
//! Central differences with a re-evaluation determinism check. Used by the
//! test suite and the `gradcheck` CLI command; requires 64-bit mode (the only
//! mode this crate has).

use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Per-input worst case from one check.
#[derive(Debug, Clone)]
pub struct InputReport {
    pub input_index: usize,
    pub max_rel_err: f64,
    /// Flat element index where the worst error occurred.
    pub worst_element: usize,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub name: String,
    pub inputs: Vec<InputReport>,
    pub max_rel_err: f64,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err <= self.tol
    }
}

impl std::fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{:<40} {} (max rel err {:.3e}, tol {:.1e})",
            self.name,
            if self.passed() { "PASS" } else { "FAIL" },
            self.max_rel_err,
            self.tol
        )
    }
}

/// Relative error rule: |ad - fd| / max(1, |ad|, |fd|).
fn rel_err(ad: f64, fd: f64) -> f64 {
    (ad - fd).abs() / 1.0f64.max(ad.abs()).max(fd.abs())
}

/// Check the gradient of `f` (a tensor function producing a scalar objective)
/// against central finite differences at every element of every input.
///
/// `f` is run once per perturbed element on a fresh tape, so it must be a
/// pure function of its inputs; a re-evaluation mismatch is reported as an
/// error rather than a gradient failure.
pub fn gradcheck<F>(name: &str, f: F, inputs: &[Tensor], eps: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |tensors: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = tensors.iter().map(|t| tape.leaf(t.clone(), false)).collect();
        let obj = f(&mut tape, &vars)?;
        if tape.value(obj).numel() != 1 {
            return Err(Error::NonScalarObjective(tape.value(obj).shape().to_vec()));
        }
        Ok(tape.value(obj).item())
    };

    // determinism probe
    let y0 = eval(inputs)?;
    let y1 = eval(inputs)?;
    if y0.to_bits() != y1.to_bits() {
        return Err(Error::NonDeterministic { index: 0, first: y0, second: y1 });
    }

    // analytic gradients
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let obj = f(&mut tape, &vars)?;
    tape.backward(obj)?;
    let analytic: Vec<Tensor> = vars.iter().map(|&v| tape.grad(v)).collect::<Result<_>>()?;

    let mut reports = Vec::with_capacity(inputs.len());
    let mut overall = 0.0f64;
    for (i, input) in inputs.iter().enumerate() {
        let mut worst = 0.0f64;
        let mut worst_at = 0;
        for j in 0..input.numel() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[j] += eps;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[j] -= eps;
            let fd = (eval(&plus)? - eval(&minus)?) / (2.0 * eps);
            let e = rel_err(analytic[i].data()[j], fd);
            if e > worst {
                worst = e;
                worst_at = j;
            }
        }
        overall = overall.max(worst);
        reports.push(InputReport { input_index: i, max_rel_err: worst, worst_element: worst_at });
    }

    Ok(GradCheckReport {
        name: name.to_string(),
        inputs: reports,
        max_rel_err: overall,
        tol,
    })
}

/// Finite-difference check of every model parameter against the analytic
/// gradients of the deep-supervision loss. The model is cloned and
/// re-evaluated once per perturbed element, so keep it tiny.
pub fn gradcheck_model(
    name: &str,
    model: &crate::model::PoseModel,
    image: &Tensor,
    gt: &Tensor,
    eps: f64,
    tol: f64,
) -> Result<GradCheckReport> {
    let eval = |m: &crate::model::PoseModel| -> Result<f64> {
        let mut tape = Tape::new();
        let bound = m.bind(&mut tape, false);
        let img = tape.leaf(image.clone(), false);
        let out = m.forward(&mut tape, &bound, img)?;
        let gt_var = tape.leaf(gt.clone(), false);
        let loss = m.loss(&mut tape, &out, gt_var)?;
        Ok(tape.value(loss).item())
    };

    let y0 = eval(model)?;
    let y1 = eval(model)?;
    if y0.to_bits() != y1.to_bits() {
        return Err(Error::NonDeterministic { index: 0, first: y0, second: y1 });
    }

    let analytic: Vec<Tensor> = {
        let mut tape = Tape::new();
        let bound = model.bind(&mut tape, true);
        let img = tape.leaf(image.clone(), false);
        let out = model.forward(&mut tape, &bound, img)?;
        let gt_var = tape.leaf(gt.clone(), false);
        let loss = model.loss(&mut tape, &out, gt_var)?;
        tape.backward(loss)?;
        model
            .param_vars(&bound)
            .into_iter()
            .map(|v| tape.grad(v))
            .collect::<Result<_>>()?
    };

    let param_count = model.named_params().len();
    let mut reports = Vec::with_capacity(param_count);
    let mut overall = 0.0f64;
    for i in 0..param_count {
        let numel = model.named_params()[i].1.numel();
        let mut worst = 0.0f64;
        let mut worst_at = 0;
        for j in 0..numel {
            let mut plus = model.clone();
            plus.named_params_mut()[i].1.data_mut()[j] += eps;
            let mut minus = model.clone();
            minus.named_params_mut()[i].1.data_mut()[j] -= eps;
            let fd = (eval(&plus)? - eval(&minus)?) / (2.0 * eps);
            let e = rel_err(analytic[i].data()[j], fd);
            if e > worst {
                worst = e;
                worst_at = j;
            }
        }
        overall = overall.max(worst);
        reports.push(InputReport { input_index: i, max_rel_err: worst, worst_element: worst_at });
    }
    Ok(GradCheckReport { name: name.to_string(), inputs: reports, max_rel_err: overall, tol })
}

/// The finite-difference battery: every tape op on seeded random inputs,
/// one GRU step, graph propagation on a 2-node graph, and the full
/// two-stage fused model on a 3-node chain with 8x8 maps.
pub fn standard_suite(eps: f64, tol: f64) -> Result<Vec<GradCheckReport>> {
    use crate::graph::PoseGraph;
    use crate::model::{ModelConfig, PoseModel};
    use crate::pgnn::{PgnnMode, PgnnModel};
    use crate::tape::ConvSpec;

    let mut rng = crate::rng::stream(2024, "gradcheck/suite");
    let mut rand_t = |shape: &[usize]| -> Tensor {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rand::Rng::random_range(&mut rng, -1.0..1.0)).collect();
        Tensor::new(shape.to_vec(), data).unwrap()
    };

    let mut reports = Vec::new();

    let conv_cases: [(&str, ConvSpec, usize); 4] = [
        ("conv2d 3x3 same", ConvSpec::same(3), 3),
        ("conv2d 3x3 stride 2", ConvSpec::new(2, 1, 1), 3),
        ("conv2d 3x3 dilation 2", ConvSpec::new(1, 2, 2), 3),
        ("conv2d 1x1", ConvSpec::same(1), 1),
    ];
    for (name, spec, k) in conv_cases {
        let x = rand_t(&[1, 2, 6, 6]);
        let w = rand_t(&[2, 2, k, k]);
        let b = rand_t(&[2]);
        reports.push(gradcheck(
            name,
            move |t, v| {
                let c = t.conv2d(v[0], v[1], v[2], spec)?;
                let a = t.tanh(c)?;
                t.sum(a)
            },
            &[x, w, b],
            eps,
            tol,
        )?);
    }

    let a = rand_t(&[3, 4]);
    let b = rand_t(&[3, 4]);
    reports.push(gradcheck(
        "elementwise add/mul/sub",
        |t, v| {
            let s = t.add(v[0], v[1])?;
            let p = t.mul(s, v[0])?;
            let d = t.sub(p, v[1])?;
            t.sum(d)
        },
        &[a, b],
        eps,
        tol,
    )?);

    let x = rand_t(&[10]);
    reports.push(gradcheck(
        "sigmoid/tanh/scale chain",
        |t, v| {
            let s = t.sigmoid(v[0])?;
            let h = t.tanh(s)?;
            let sc = t.scale(h, -1.7)?;
            t.sum(sc)
        },
        &[x],
        eps,
        tol,
    )?);

    // keep relu inputs away from the kink
    let x = Tensor::new(vec![6], vec![-1.5, -0.7, -0.2, 0.3, 0.9, 1.8]).unwrap();
    reports.push(gradcheck(
        "relu",
        |t, v| {
            let r = t.relu(v[0])?;
            t.sum(r)
        },
        &[x],
        eps,
        tol,
    )?);

    let a = rand_t(&[2, 3, 3]);
    let b = rand_t(&[2, 3, 3]);
    reports.push(gradcheck("sum_sq_diff", |t, v| t.sum_sq_diff(v[0], v[1]), &[a, b], eps, tol)?);

    let x = {
        // keep the normalizing sum well away from zero
        let mut t = rand_t(&[1, 1, 3, 3]);
        for v in t.data_mut() {
            *v = v.abs() + 0.5;
        }
        t
    };
    reports.push(gradcheck(
        "normalize (sum/recip/scale_by)",
        |t, v| {
            let z = t.sum(v[0])?;
            let inv = t.recip(z)?;
            let n = t.scale_by(v[0], inv)?;
            let sq = t.mul(n, n)?;
            t.sum(sq)
        },
        &[x],
        eps,
        tol,
    )?);

    let x = rand_t(&[1, 3, 4, 4]);
    reports.push(gradcheck(
        "slice/concat channels",
        |t, v| {
            let c0 = t.slice_channel(v[0], 0)?;
            let c2 = t.slice_channel(v[0], 2)?;
            let m = t.mul(c0, c2)?;
            let cat = t.concat_channels(&[m, c0])?;
            t.sum(cat)
        },
        &[x],
        eps,
        tol,
    )?);

    // one GRU step, all nine gate tensors plus state and message
    let gate_shapes: [&[usize]; 11] = [
        &[1, 1, 4, 4], // h
        &[1, 1, 4, 4], // x
        &[1, 1, 3, 3], // w_z
        &[1, 1, 3, 3], // u_z
        &[1],          // b_z
        &[1, 1, 3, 3], // w_r
        &[1, 1, 3, 3], // u_r
        &[1],          // b_r
        &[1, 1, 3, 3], // w_h
        &[1, 1, 3, 3], // u_h
        &[1],          // b_h
    ];
    let inputs: Vec<Tensor> = gate_shapes.iter().map(|s| rand_t(s)).collect();
    reports.push(gradcheck(
        "gru_update",
        |t, v| {
            let zero = t.leaf(Tensor::zeros(&[1]), false);
            let gates = crate::pgnn::BoundGates {
                w_z: v[2],
                u_z: v[3],
                b_z: v[4],
                w_r: v[5],
                u_r: v[6],
                b_r: v[7],
                w_h: v[8],
                u_h: v[9],
                b_h: v[10],
            };
            let h1 = crate::pgnn::gru_update(t, &gates, v[0], v[1], zero, 3)?;
            t.sum(h1)
        },
        &inputs,
        eps,
        tol,
    )?);

    // propagation on a 2-node graph: check every parameter via the model path
    {
        let graph = PoseGraph::chain(2);
        let pgnn = PgnnModel::new(graph, 3, 3, 2, PgnnMode::Gru, 91);
        let unary = rand_t(&[1, 2, 4, 4]);
        let gt = rand_t(&[1, 2, 4, 4]);
        let param_tensors: Vec<Tensor> =
            pgnn.named_params().iter().map(|(_, t)| (*t).clone()).collect();
        let pgnn_ref = pgnn.clone();
        reports.push(gradcheck(
            "pgnn propagate (2 nodes, T=2)",
            move |t, v| {
                let bound = crate::pgnn::BoundPgnn::from_vars(&pgnn_ref, v, t)?;
                let u = t.leaf(unary.clone(), false);
                let out = pgnn_ref.propagate(t, &bound, u)?;
                let g = t.leaf(gt.clone(), false);
                crate::pgnn::heatmap_loss(t, out, g)
            },
            &param_tensors,
            eps,
            tol,
        )?);
    }

    // the full fused model: 2-stage backbone, 3-node chain, 8x8 maps.
    // Central differences lie near relu kinks, so the evaluation point is
    // made kink-free by construction: each conv layer's biases are shifted
    // into the widest gap of that layer's pre-activation distribution, and
    // the final margin must dwarf anything an eps-sized parameter nudge can
    // move a pre-activation by.
    {
        let cfg = ModelConfig {
            num_joints: 3,
            map_h: 8,
            map_w: 8,
            stages: 2,
            width: 4,
            steps: 2,
            graph: crate::graph::GraphKind::Custom,
            cpf: true,
            seed: 1,
            ..ModelConfig::default()
        };
        let mut model = PoseModel::new(&cfg)?;
        let mut prng = crate::rng::stream(1, "gradcheck/full-model");
        let mut draw = |shape: &[usize], lo: f64, hi: f64| -> Tensor {
            let n: usize = shape.iter().product();
            let data = (0..n).map(|_| rand::Rng::random_range(&mut prng, lo..hi)).collect();
            Tensor::new(shape.to_vec(), data).unwrap()
        };
        let image = draw(&[1, 1, 16, 16], 0.0, 1.0);
        let gt = draw(&[1, 3, 8, 8], 0.0, 1.0);

        let forward_relu_inputs = |m: &PoseModel| -> Result<Vec<Vec<f64>>> {
            let mut tape = Tape::new();
            let bound = m.bind(&mut tape, false);
            let img = tape.leaf(image.clone(), false);
            m.forward(&mut tape, &bound, img)?;
            Ok(tape.relu_inputs())
        };

        // relu order in the forward pass: stem, then conv1/conv2 per stage
        let mut bias_names = vec!["backbone/stem/bias".to_string()];
        for i in 0..cfg.stages {
            bias_names.push(format!("backbone/stage{i}/conv1/bias"));
            bias_names.push(format!("backbone/stage{i}/conv2/bias"));
        }
        for (layer, bias_name) in bias_names.iter().enumerate() {
            let inputs = forward_relu_inputs(&model)?;
            let shift = widest_gap_shift(&inputs[layer], 0.5);
            for (name, t) in model.named_params_mut() {
                if &name == bias_name {
                    for v in t.data_mut() {
                        *v += shift;
                    }
                }
            }
        }
        let margin = forward_relu_inputs(&model)?
            .iter()
            .flatten()
            .fold(f64::INFINITY, |m, v| m.min(v.abs()));
        let guard = 1e-3f64.max(100.0 * eps);
        if margin <= guard {
            return Err(Error::Config(format!(
                "full-model check point margin {margin:.3e} is below the {guard:.1e} guard band"
            )));
        }
        reports.push(gradcheck_model(
            "full model (2 stages + 3-node graph)",
            &model,
            &image,
            &gt,
            eps,
            tol,
        )?);
    }

    Ok(reports)
}

/// Shift that moves 0 into the middle of the widest gap of `values` within
/// [-window, window]. Maximizes the distance from every value to zero after
/// adding the shift.
fn widest_gap_shift(values: &[f64], window: f64) -> f64 {
    let mut vals: Vec<f64> = values.to_vec();
    vals.sort_by(|a, b| a.partial_cmp(b).expect("finite pre-activations"));
    let mut best_shift = 0.0;
    let mut best_margin = f64::NEG_INFINITY;
    let mut consider = |shift: f64| {
        if shift.abs() > window {
            return;
        }
        let margin = vals.iter().fold(f64::INFINITY, |m, v| m.min((v + shift).abs()));
        if margin > best_margin {
            best_margin = margin;
            best_shift = shift;
        }
    };
    consider(0.0);
    consider(window);
    consider(-window);
    for w in vals.windows(2) {
        consider(-(w[0] + w[1]) / 2.0);
    }
    best_shift
}
