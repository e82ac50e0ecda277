//! Central finite-difference gradient checking at 64-bit precision.

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::params::{BoundParams, ParamSet};
use crate::tensor::Tensor;

/// Builds a scalar loss from bound parameters. Must be deterministic:
/// any dropout inside must carry a fixed seed.
pub trait LossBuilder {
    fn build(&self, graph: &mut Graph<f64>, params: &BoundParams) -> Result<NodeId>;
}

impl<F> LossBuilder for F
where
    F: Fn(&mut Graph<f64>, &BoundParams) -> Result<NodeId>,
{
    fn build(&self, graph: &mut Graph<f64>, params: &BoundParams) -> Result<NodeId> {
        self(graph, params)
    }
}

fn eval_loss(builder: &impl LossBuilder, params: &ParamSet<f64>) -> Result<f64> {
    let mut graph = Graph::new(true);
    let bound = params.bind(&mut graph);
    let loss = builder.build(&mut graph, &bound)?;
    if graph.value(loss).len() != 1 {
        return Err(Error::shape("gradcheck", "builder must produce a scalar loss"));
    }
    Ok(graph.value(loss).item())
}

/// Compare analytic gradients against central differences
/// `(f(x+eps) - f(x-eps)) / (2 eps)` elementwise; the returned figure is the
/// max relative error with denominator `max(|analytic|, |numeric|, 1e-8)`.
pub fn finite_difference_gradcheck(
    builder: &impl LossBuilder,
    init: &ParamSet<f64>,
    eps: f64,
) -> Result<f64> {
    if !(1e-6..=1e-3).contains(&eps) {
        return Err(Error::Config(format!("gradcheck eps {eps} outside [1e-6, 1e-3]")));
    }

    // determinism probe: two evaluations must agree bitwise
    let base = eval_loss(builder, init)?;
    if eval_loss(builder, init)?.to_bits() != base.to_bits() {
        return Err(Error::Config(
            "gradcheck builder is non-deterministic (unseeded dropout?)".into(),
        ));
    }

    let mut graph = Graph::new(true);
    let bound = init.bind(&mut graph);
    let loss = builder.build(&mut graph, &bound)?;
    graph.backward(loss)?;
    let analytic = bound.gradients(&graph);

    let mut max_rel = 0.0f64;
    let names: Vec<String> = init.names().map(String::from).collect();
    for name in &names {
        let n = init.get(name)?.len();
        for i in 0..n {
            let mut plus = init.clone();
            plus.get_mut(name)?.data_mut()[i] += eps;
            let mut minus = init.clone();
            minus.get_mut(name)?.data_mut()[i] -= eps;
            let numeric = (eval_loss(builder, &plus)? - eval_loss(builder, &minus)?) / (2.0 * eps);
            let a = analytic.get(name)?.data()[i];
            let denom = a.abs().max(numeric.abs()).max(1e-8);
            let rel = (a - numeric).abs() / denom;
            if rel > max_rel {
                max_rel = rel;
            }
        }
    }
    Ok(max_rel)
}

/// Convenience for single-tensor checks.
pub fn gradcheck_single(
    builder: impl Fn(&mut Graph<f64>, NodeId) -> Result<NodeId>,
    init: Tensor<f64>,
    eps: f64,
) -> Result<f64> {
    let mut params = ParamSet::new();
    params.insert("x", init);
    finite_difference_gradcheck(
        &|g: &mut Graph<f64>, p: &BoundParams| builder(g, p.id("x")),
        &params,
        eps,
    )
}

/// One named entry of a gradient-check suite.
#[derive(Clone, Debug, serde::Serialize)]
pub struct SuiteResult {
    pub name: String,
    pub max_rel_error: f64,
}

fn random_suite_tensor(rng: &mut rand_chacha::ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    use rand::Rng;
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.5..1.5)).collect())
        .expect("shape matches")
}

/// Check every autodiff primitive at random shapes (≤ 4×5), `trials` times
/// each, at eps = 1e-4; returns one max-relative-error entry per check.
pub fn primitive_suite(seed: u64, trials: usize) -> Result<Vec<SuiteResult>> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let eps = 1e-4;
    let mut out = Vec::new();
    let mut check = |label: &str,
                     params: ParamSet<f64>,
                     b: &dyn Fn(&mut Graph<f64>, &BoundParams) -> Result<NodeId>|
     -> Result<()> {
        let err = finite_difference_gradcheck(
            &|g: &mut Graph<f64>, p: &BoundParams| b(g, p),
            &params,
            eps,
        )?;
        out.push(SuiteResult { name: label.to_string(), max_rel_error: err });
        Ok(())
    };

    for trial in 0..trials {
        let m = rng.gen_range(1..=4);
        let k = rng.gen_range(1..=4);
        let n = rng.gen_range(1..=5);

        let mut p = ParamSet::new();
        p.insert("a", random_suite_tensor(&mut rng, &[m, k]));
        p.insert("b", random_suite_tensor(&mut rng, &[k, n]));
        check("matmul", p, &|g, p| {
            let y = g.matmul(p.id("a"), p.id("b"))?;
            g.mean(y)
        })?;

        let mut p = ParamSet::new();
        p.insert("a", random_suite_tensor(&mut rng, &[m, n]));
        p.insert("b", random_suite_tensor(&mut rng, &[n]));
        check("add_bias", p, &|g, p| {
            let y = g.add(p.id("a"), p.id("b"))?;
            g.mean(y)
        })?;

        let mut p = ParamSet::new();
        p.insert("a", random_suite_tensor(&mut rng, &[m, n]));
        p.insert("b", random_suite_tensor(&mut rng, &[m, n]));
        check("mul", p, &|g, p| {
            let y = g.mul(p.id("a"), p.id("b"))?;
            g.mean(y)
        })?;

        let mut p = ParamSet::new();
        p.insert("table", random_suite_tensor(&mut rng, &[4, n]));
        let ids = vec![rng.gen_range(0..4), rng.gen_range(0..4), rng.gen_range(0..4)];
        check("embedding_gather", p, &move |g, p| {
            let y = g.embedding_gather(p.id("table"), ids.clone())?;
            g.mean(y)
        })?;

        let mut p = ParamSet::new();
        p.insert("x", random_suite_tensor(&mut rng, &[m, n]));
        p.insert("gain", random_suite_tensor(&mut rng, &[n]));
        p.insert("bias", random_suite_tensor(&mut rng, &[n]));
        check("layer_norm", p, &|g, p| {
            let y = g.layer_norm(p.id("x"), p.id("gain"), p.id("bias"))?;
            let sq = g.mul(y, y)?;
            g.mean(sq)
        })?;

        for (label, f) in
            [("softmax", 0usize), ("gelu", 1), ("tanh", 2), ("sigmoid", 3)]
        {
            let mut p = ParamSet::new();
            p.insert("x", random_suite_tensor(&mut rng, &[m, n]));
            check(label, p, &move |g, p| {
                let x = p.id("x");
                let y = match f {
                    0 => g.softmax(x)?,
                    1 => g.gelu(x)?,
                    2 => g.tanh(x)?,
                    _ => g.sigmoid(x)?,
                };
                let w = g.mul(y, y)?;
                g.mean(w)
            })?;
        }

        let mut p = ParamSet::new();
        p.insert("x", random_suite_tensor(&mut rng, &[3, n]));
        let dropout_seed = 1000 + trial as u64;
        check("dropout", p, &move |g, p| {
            let y = g.dropout(p.id("x"), 0.4, dropout_seed)?;
            g.mean(y)
        })?;

        let mut p = ParamSet::new();
        p.insert("a", random_suite_tensor(&mut rng, &[m, 2]));
        p.insert("b", random_suite_tensor(&mut rng, &[m, 3]));
        check("concat+slice", p, &|g, p| {
            let c = g.concat(&[p.id("a"), p.id("b")], 1)?;
            let s = g.slice(c, 1, 1, 4)?;
            let sq = g.mul(s, s)?;
            g.mean(sq)
        })?;

        let mut p = ParamSet::new();
        p.insert("x", random_suite_tensor(&mut rng, &[m, n]));
        check("scale+transpose+reshape", p, &move |g, p| {
            let s = g.scale(p.id("x"), -1.7)?;
            let t = g.transpose(s, vec![1, 0])?;
            let r = g.reshape(t, vec![n * m])?;
            let sq = g.mul(r, r)?;
            g.mean(sq)
        })?;

        let mut p = ParamSet::new();
        p.insert("z", random_suite_tensor(&mut rng, &[m, 4]));
        let targets: Vec<usize> = (0..m).map(|_| rng.gen_range(0..4)).collect();
        check("cross_entropy", p, &move |g, p| {
            let ce = g.cross_entropy_with_logits(p.id("z"), targets.clone())?;
            g.mean(ce)
        })?;

        let mut p = ParamSet::new();
        p.insert("z", random_suite_tensor(&mut rng, &[m, n]));
        let t: Tensor<f64> = Tensor::new(
            vec![m, n],
            (0..m * n).map(|i| if i % 2 == 0 { 1.0 } else { 0.0 }).collect(),
        )?;
        check("bce_with_logits", p, &move |g, p| {
            let tt = g.constant(t.clone());
            let l = g.bce_with_logits(p.id("z"), tt)?;
            g.mean(l)
        })?;

        let mut p = ParamSet::new();
        p.insert("z", random_suite_tensor(&mut rng, &[m, m, n]));
        p.insert("w", random_suite_tensor(&mut rng, &[m, n, 2]));
        check("batched_matmul", p, &|g, p| {
            let y = g.matmul(p.id("z"), p.id("w"))?;
            g.mean(y)
        })?;
    }
    Ok(out)
}

/// Check each full task loss (emotion, CDP, MLM) through a tiny encoder
/// (1 layer, 2 heads, hidden 8, vocab 20) at eps = 1e-4.
///
/// Parameters are perturbed to O(0.1) values: at the 0.02-std training init
/// the loss surface is nearly flat and many true gradients are ~1e-9, where
/// finite-difference roundoff dominates the relative error.
pub fn encoder_task_suite(seed: u64) -> Result<Vec<SuiteResult>> {
    use crate::model::{
        self, EncoderConfig, PaddedBatch,
    };
    use crate::tokenizer::{CLS, SEP};
    use rand::{Rng, SeedableRng};
    use std::collections::BTreeSet;

    let cfg = EncoderConfig::tiny(20, 3);
    let mut params: ParamSet<f64> = model::init_parameters(&cfg)?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let names: Vec<String> = params.names().map(String::from).collect();
    for name in &names {
        for v in params.get_mut(name)?.data_mut() {
            *v += rng.gen_range(-0.4..0.4);
        }
    }
    let ids: Vec<Vec<usize>> =
        (0..2).map(|i| vec![CLS, 5 + i % 7, 6, SEP, 7 + i % 5]).collect();
    let segs: Vec<Vec<usize>> = (0..2).map(|_| vec![0, 0, 0, 0, 1]).collect();
    let batch = PaddedBatch::new(&ids, &segs, 16)?;
    let targets: Vec<BTreeSet<usize>> =
        vec![[0].into_iter().collect(), [1, 2].into_iter().collect()];
    let emotion_targets: Tensor<f64> = model::multi_hot(&targets, cfg.num_labels);

    let mut out = Vec::new();
    for task in ["emotion", "cdp", "mlm"] {
        let cfg = cfg.clone();
        let batch = batch.clone();
        let emotion_targets = emotion_targets.clone();
        let err = finite_difference_gradcheck(
            &move |g: &mut Graph<f64>, p: &BoundParams| {
                let hidden = model::encode(g, p, &cfg, &batch)?;
                match task {
                    "emotion" => {
                        let pooled = model::pool(g, p, hidden, &batch)?;
                        let logits = model::emotion_logits(g, p, &cfg, pooled, 123)?;
                        model::emotion_loss(g, logits, &emotion_targets)
                    }
                    "cdp" => {
                        let pooled = model::pool(g, p, hidden, &batch)?;
                        let logits = model::cdp_logits(g, p, pooled)?;
                        model::cross_entropy_loss(g, logits, vec![1, 0])
                    }
                    _ => {
                        let logits = model::mlm_logits(g, p, hidden, &[1, 4, 6])?;
                        model::cross_entropy_loss(g, logits, vec![5, 9, 13])
                    }
                }
            },
            &params,
            1e-4,
        )?;
        out.push(SuiteResult { name: format!("encoder/{task}"), max_rel_error: err });
    }
    Ok(out)
}

/// Primitives (3 trials each) plus all task losses through the tiny encoder.
pub fn full_suite(seed: u64) -> Result<Vec<SuiteResult>> {
    let mut out = primitive_suite(seed, 3)?;
    out.extend(encoder_task_suite(seed ^ 0x656e63)?);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.5..1.5)).collect()).unwrap()
    }

    #[test]
    fn linear_layer_tight_tolerance() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut params = ParamSet::new();
        params.insert("w", random_tensor(&mut rng, &[3, 4]));
        params.insert("b", random_tensor(&mut rng, &[4]));
        params.insert("x", random_tensor(&mut rng, &[2, 3]));
        let err = finite_difference_gradcheck(
            &|g: &mut Graph<f64>, p: &BoundParams| {
                let y = g.linear(p.id("x"), p.id("w"), p.id("b"))?;
                g.mean(y)
            },
            &params,
            1e-4,
        )
        .unwrap();
        assert!(err < 1e-6, "max rel error {err}");
    }

    #[test]
    fn constant_function_has_zero_gradient_both_ways() {
        let mut params = ParamSet::new();
        params.insert("x", Tensor::from_vec(vec![1.0, -2.0]));
        let err = finite_difference_gradcheck(
            &|g: &mut Graph<f64>, p: &BoundParams| {
                let c = g.constant(Tensor::scalar(3.5));
                let _ = p.id("x");
                g.mean(c)
            },
            &params,
            1e-4,
        )
        .unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn eps_outside_range_rejected() {
        let mut params = ParamSet::new();
        params.insert("x", Tensor::from_vec(vec![1.0]));
        let b = |g: &mut Graph<f64>, p: &BoundParams| g.mean(p.id("x"));
        assert!(finite_difference_gradcheck(&b, &params, 1e-2).is_err());
    }

    #[test]
    fn every_primitive_passes_gradcheck_at_random_shapes() {
        for entry in primitive_suite(99, 3).unwrap() {
            assert!(
                entry.max_rel_error < 1e-4,
                "{}: max rel error {}",
                entry.name,
                entry.max_rel_error
            );
        }
    }
}
