//! The product-form degeneration: with product aggregation and the
//! normalized-marginal update, the message-passing network computes exactly
//! the brute-force marginal. This example runs both routes on a 3-node
//! chain and prints the disagreement (which should sit at float-noise
//! level).
//!
//! ```text
//! cargo run --release --example mrf_equivalence
//! ```

use rand::Rng;
use stickpose::graph::PoseGraph;
use stickpose::pgnn::{mrf_marginal, PgnnMode, PgnnModel};
use stickpose::tape::Tape;
use stickpose::tensor::Tensor;

fn main() -> stickpose::Result<()> {
    let graph = PoseGraph::chain(3);
    let mut model = PgnnModel::new(graph.clone(), 3, 3, 1, PgnnMode::Mrf, 9);
    for e in &mut model.edges {
        e.bias = Tensor::new(vec![1], vec![0.02])?;
    }

    // nonnegative, per-node normalized unary maps
    let (h, w) = (5usize, 5usize);
    let mut rng = stickpose::rng::stream(3, "mrf-example");
    let mut unary = vec![0.0; 3 * h * w];
    for node in 0..3 {
        let plane = &mut unary[node * h * w..(node + 1) * h * w];
        for v in plane.iter_mut() {
            *v = rng.random_range(0.01..1.0);
        }
        let z: f64 = plane.iter().sum();
        for v in plane.iter_mut() {
            *v /= z;
        }
    }
    let unary = Tensor::new(vec![3, h, w], unary)?;

    // route 1: direct marginal computation
    let oracle = mrf_marginal(&graph, &unary, &model.edges)?;

    // route 2: the network in product mode, T = 1
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape, false);
    let u = tape.leaf(Tensor::new(vec![1, 3, h, w], unary.data().to_vec())?, false);
    let out = model.propagate(&mut tape, &bound, u)?;

    let max_diff = oracle
        .data()
        .iter()
        .zip(tape.value(out).data())
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    println!("marginals per node sum to 1, max |network - direct| = {max_diff:.3e}");

    for node in 0..3 {
        let plane = &tape.value(out).data()[node * h * w..(node + 1) * h * w];
        let peak = plane
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap();
        println!(
            "node {node}: mass {:.6}, peak {:.4} at ({}, {})",
            plane.iter().sum::<f64>(),
            peak.1,
            peak.0 / w,
            peak.0 % w
        );
    }
    assert!(max_diff < 1e-10);
    Ok(())
}
