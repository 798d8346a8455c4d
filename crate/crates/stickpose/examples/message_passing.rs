//! How far does information travel? With the update gate forced open and
//! 1x1 kernels, a perturbation of one joint's unary map can only reach
//! joints within T graph hops. This example perturbs the left ankle's map
//! and prints which joints change after each step count.
//!
//! ```text
//! cargo run --release --example message_passing
//! ```

use stickpose::graph::PoseGraph;
use stickpose::pgnn::{PgnnMode, PgnnModel};
use stickpose::skeleton::{joints, Skeleton};
use stickpose::tape::Tape;
use stickpose::tensor::Tensor;

fn refined(model: &PgnnModel, unary: &Tensor) -> Vec<f64> {
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape, false);
    let u = tape.leaf(unary.clone(), false);
    let out = model.propagate(&mut tape, &bound, u).unwrap();
    tape.value(out).data().to_vec()
}

fn main() -> stickpose::Result<()> {
    let skeleton = Skeleton::lsp14();
    let graph = PoseGraph::tree(&skeleton);
    let distances = graph.distances_from(joints::L_ANKLE);
    let (h, w) = (6usize, 6usize);

    let mut rng = stickpose::rng::stream(1, "locality-example");
    let unary = Tensor::new(
        vec![1, 14, h, w],
        (0..14 * h * w).map(|_| rand::Rng::random_range(&mut rng, -0.5..0.5)).collect(),
    )?;
    let mut poked = unary.clone();
    poked.data_mut()[joints::L_ANKLE * h * w + 14] += 0.37;

    for steps in 0..=3usize {
        let mut model = PgnnModel::new(graph.clone(), 1, 1, steps, PgnnMode::Gru, 4);
        // force the update gate open so every step really propagates
        for g in &mut model.gates {
            g.b_z = Tensor::new(vec![1], vec![1000.0])?;
        }
        let base = refined(&model, &unary);
        let moved = refined(&model, &poked);
        let mut changed = Vec::new();
        for k in 0..14 {
            let a = &base[k * h * w..(k + 1) * h * w];
            let b = &moved[k * h * w..(k + 1) * h * w];
            if a.iter().zip(b).any(|(x, y)| x != y) {
                changed.push(k);
            }
        }
        println!("T = {steps}: perturbing l_ankle reaches {} joints", changed.len());
        for &k in &changed {
            println!(
                "  {:<11} graph distance {}",
                skeleton.name(k),
                distances[k].map(|d| d.to_string()).unwrap_or_else(|| "-".into())
            );
            assert!(distances[k].unwrap() <= steps);
        }
    }
    Ok(())
}
