//! Finite-difference gradient checking for the losses and every autodiff
//! primitive. These routines are the independent oracle for all analytic
//! gradients in the crate: each check rebuilds the forward value from
//! scratch at perturbed inputs and never touches the backward code paths
//! it verifies.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{NodeId, Tape, Tensor};
use crate::grid::{GridSpec, LabelVolume, IGNORE_LABEL};
use crate::loss::{classwise_entropy_loss, cross_entropy_loss, select_classes, ProbVolume};

/// Step used by every central difference in the crate.
pub const FD_STEP: f64 = 1e-4;

/// Relative tolerance gradients are held to.
pub const GRAD_TOL: f64 = 1e-4;

/// Central finite differences of a scalar function.
pub fn central_diff<F: FnMut(&[f64]) -> f64>(mut f: F, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + h;
        let plus = f(&probe);
        probe[i] = orig - h;
        let minus = f(&probe);
        probe[i] = orig;
        out.push((plus - minus) / (2.0 * h));
    }
    out
}

/// Largest elementwise relative error, with a floor on the denominator so
/// near-zero gradients compare absolutely against 1e-6.
pub fn max_rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-6))
        .fold(0.0, f64::max)
}

/// Random logits and labels for loss checks. Instances are resampled until
/// every present class sits clearly on one side of the selection rule, so
/// the discrete set S cannot flip inside the finite-difference step.
pub fn random_loss_instance(seed: u64, k: usize, voxels: usize) -> (ProbVolume, LabelVolume) {
    let spec = GridSpec::new([voxels, 1, 1], 1.0, [0.0; 3]).expect("line grid");
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ((k as u64) << 32) ^ (voxels as u64));
    for _ in 0..1000 {
        let logits: Vec<f64> = (0..k * voxels).map(|_| rng.random_range(-2.0..2.0)).collect();
        let labels: Vec<u8> = (0..voxels)
            .map(|_| {
                if rng.random::<f64>() < 0.1 {
                    IGNORE_LABEL
                } else {
                    rng.random_range(0..k as u32) as u8
                }
            })
            .collect();
        let probs = ProbVolume::from_logits(spec, k, logits).expect("finite logits");
        let gt = LabelVolume::new(spec, labels).expect("labels in range");
        if selection_is_stable(&probs, &gt, 1e-3) {
            return (probs, gt);
        }
    }
    panic!("could not build a selection-stable instance for seed {seed}");
}

/// True when no per-class mean probability is within `margin` of the
/// argmax decision boundary.
fn selection_is_stable(probs: &ProbVolume, gt: &LabelVolume, margin: f64) -> bool {
    let selection = select_classes(probs, gt).expect("aligned inputs");
    for c in 1..probs.num_classes() {
        if let Some(mean) = &selection.mean_probs[c] {
            let own = mean[c];
            let best_other = mean
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != c)
                .map(|(_, &v)| v)
                .fold(f64::NEG_INFINITY, f64::max);
            if (own - best_other).abs() < margin {
                return false;
            }
        }
    }
    true
}

/// Max relative error of the cross-entropy gradient against central
/// differences on the given instance.
pub fn cross_entropy_fd_error(probs: &ProbVolume, gt: &LabelVolume) -> f64 {
    let k = probs.num_classes();
    let weights = vec![1.0; k];
    let spec = *probs.spec();
    let report = cross_entropy_loss(probs, gt, &weights).expect("aligned instance");
    let numeric = central_diff(
        |logits| {
            let p = ProbVolume::from_logits(spec, k, logits.to_vec()).expect("finite");
            cross_entropy_loss(&p, gt, &weights).expect("aligned").value
        },
        probs.logits(),
        FD_STEP,
    );
    max_rel_error(&report.grad_logits, &numeric)
}

/// Max relative error of the classwise entropy gradient against central
/// differences on the given instance.
pub fn classwise_entropy_fd_error(probs: &ProbVolume, gt: &LabelVolume) -> f64 {
    let k = probs.num_classes();
    let spec = *probs.spec();
    let report = classwise_entropy_loss(probs, gt).expect("aligned instance");
    let numeric = central_diff(
        |logits| {
            let p = ProbVolume::from_logits(spec, k, logits.to_vec()).expect("finite");
            classwise_entropy_loss(&p, gt).expect("aligned").value
        },
        probs.logits(),
        FD_STEP,
    );
    max_rel_error(&report.grad_logits, &numeric)
}

/// One randomized loss check case.
#[derive(Debug, Clone)]
pub struct LossCheckCase {
    pub classes: usize,
    pub voxels: usize,
    pub cross_entropy_rel: f64,
    pub classwise_entropy_rel: f64,
}

/// Run `instances` randomized loss gradient checks alternating K between 3
/// and 12, with voxel counts in [10, 200].
pub fn loss_gradcheck_suite(seed: u64, instances: usize) -> Vec<LossCheckCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..instances)
        .map(|i| {
            let k = if i % 2 == 0 { 3 } else { 12 };
            let voxels = rng.random_range(10..=200);
            let (probs, gt) = random_loss_instance(seed.wrapping_add(i as u64), k, voxels);
            LossCheckCase {
                classes: k,
                voxels,
                cross_entropy_rel: cross_entropy_fd_error(&probs, &gt),
                classwise_entropy_rel: classwise_entropy_fd_error(&probs, &gt),
            }
        })
        .collect()
}

/// Builder for one primitive under test: forward from leaf nodes to an
/// output node.
type Build = Box<dyn Fn(&mut Tape, &[NodeId]) -> NodeId>;

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], avoid_zero: bool) -> Tensor {
    let data: Vec<f64> = (0..shape.iter().product::<usize>())
        .map(|_| {
            let mut v: f64 = rng.random_range(-1.0..1.0);
            if avoid_zero {
                // keep values away from the relu kink
                while v.abs() < 0.05 {
                    v = rng.random_range(-1.0..1.0);
                }
            }
            v
        })
        .collect();
    Tensor::from_vec(shape, data).expect("matching data length")
}

/// Check one primitive: root = <probe, primitive(inputs)>, finite
/// differences taken over every input tensor. Returns the max relative
/// error across inputs.
fn check_primitive(
    rng: &mut ChaCha8Rng,
    input_shapes: &[&[usize]],
    avoid_zero: bool,
    build: Build,
) -> f64 {
    let inputs: Vec<Tensor> = input_shapes
        .iter()
        .map(|s| random_tensor(rng, s, avoid_zero))
        .collect();

    // one forward to learn the output shape, then a fixed probe vector
    let out_shape = {
        let mut tape = Tape::new();
        let ids: Vec<NodeId> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = build(&mut tape, &ids);
        tape.value(out).shape.clone()
    };
    let probe = random_tensor(rng, &out_shape, false);

    let run = |tensors: &[Tensor]| -> (f64, Vec<Vec<f64>>) {
        let mut tape = Tape::new();
        let ids: Vec<NodeId> = tensors.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = build(&mut tape, &ids);
        let p = tape.leaf(probe.clone());
        let prod = tape.mul(out, p).expect("probe matches output shape");
        let root = tape.sum(prod);
        let grads = tape.backward(root).expect("scalar root");
        (
            tape.value(root).data[0],
            ids.iter().map(|id| grads[id.0].data.clone()).collect(),
        )
    };

    let (_, analytic) = run(&inputs);
    let mut worst = 0f64;
    for which in 0..inputs.len() {
        let numeric = central_diff(
            |xdata| {
                let mut tensors = inputs.clone();
                tensors[which].data = xdata.to_vec();
                run(&tensors).0
            },
            &inputs[which].data,
            FD_STEP,
        );
        worst = worst.max(max_rel_error(&analytic[which], &numeric));
    }
    worst
}

/// Finite-difference check of every autodiff primitive on small random
/// tensors. Returns `(name, max relative error)` per primitive.
pub fn primitive_gradcheck(seed: u64) -> Vec<(String, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut results: Vec<(String, f64)> = Vec::new();
    let push = |name: &str, rel: f64, results: &mut Vec<(String, f64)>| {
        results.push((name.to_string(), rel));
    };

    let r = check_primitive(
        &mut rng,
        &[&[2, 5, 4, 3], &[2, 5, 4, 3]],
        false,
        Box::new(|t, ids| t.add(ids[0], ids[1]).unwrap()),
    );
    push("add", r, &mut results);

    let r = check_primitive(
        &mut rng,
        &[&[2, 5, 4, 3], &[2, 5, 4, 3]],
        false,
        Box::new(|t, ids| t.mul(ids[0], ids[1]).unwrap()),
    );
    push("mul", r, &mut results);

    let r = check_primitive(
        &mut rng,
        &[&[3, 4, 2]],
        false,
        Box::new(|t, ids| t.scalar_mul(ids[0], -1.7)),
    );
    push("scalar_mul", r, &mut results);

    let r = check_primitive(
        &mut rng,
        &[&[2, 4, 4, 4]],
        true,
        Box::new(|t, ids| t.relu(ids[0])),
    );
    push("relu", r, &mut results);

    let r = check_primitive(
        &mut rng,
        &[&[3, 2, 3, 2], &[4, 3], &[4]],
        false,
        Box::new(|t, ids| t.linear(ids[0], ids[1], ids[2]).unwrap()),
    );
    push("linear", r, &mut results);

    let r = check_primitive(
        &mut rng,
        &[&[2, 5, 4, 3], &[3, 2, 3, 3, 3], &[3]],
        false,
        Box::new(|t, ids| t.conv3d(ids[0], ids[1], ids[2], 1).unwrap()),
    );
    push("conv3d_stride1", r, &mut results);

    let r = check_primitive(
        &mut rng,
        &[&[2, 5, 4, 3], &[3, 2, 3, 3, 3], &[3]],
        false,
        Box::new(|t, ids| t.conv3d(ids[0], ids[1], ids[2], 2).unwrap()),
    );
    push("conv3d_stride2", r, &mut results);

    let r = check_primitive(
        &mut rng,
        &[&[2, 8, 8, 8], &[2, 2, 3, 3, 3], &[2]],
        false,
        Box::new(|t, ids| t.conv3d(ids[0], ids[1], ids[2], 2).unwrap()),
    );
    push("conv3d_even_dims", r, &mut results);

    let r = check_primitive(
        &mut rng,
        &[&[2, 3, 2, 2]],
        false,
        Box::new(|t, ids| t.upsample_nearest2(ids[0]).unwrap()),
    );
    push("upsample_nearest", r, &mut results);

    let r = check_primitive(
        &mut rng,
        &[&[2, 4, 3, 2], &[3, 4, 3, 2]],
        false,
        Box::new(|t, ids| t.concat_channels(ids[0], ids[1]).unwrap()),
    );
    push("concat_channels", r, &mut results);

    let r = check_primitive(
        &mut rng,
        &[&[4, 2, 3]],
        false,
        Box::new(|t, ids| t.softmax_channels(ids[0]).unwrap()),
    );
    push("softmax_channels", r, &mut results);

    let r = check_primitive(
        &mut rng,
        &[&[3, 4]],
        false,
        Box::new(|t, ids| {
            let s = t.sum(ids[0]);
            t.scalar_mul(s, 0.5)
        }),
    );
    push("sum", r, &mut results);

    results
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn central_diff_matches_known_derivative() {
        // f(x) = x0^2 + 3 x1, grad = (2 x0, 3)
        let g = central_diff(|x| x[0] * x[0] + 3.0 * x[1], &[1.5, -2.0], FD_STEP);
        assert!((g[0] - 3.0).abs() < 1e-6);
        assert!((g[1] - 3.0).abs() < 1e-10);
    }

    #[test]
    fn rel_error_floors_small_denominators() {
        assert!(max_rel_error(&[0.0], &[1e-10]) < 1e-3);
        assert!(max_rel_error(&[1.0], &[2.0]) >= 0.5);
    }

    #[test]
    fn suite_covers_both_class_counts() {
        let cases = loss_gradcheck_suite(7, 4);
        assert!(cases.iter().any(|c| c.classes == 3));
        assert!(cases.iter().any(|c| c.classes == 12));
        assert!(cases.iter().all(|c| (10..=200).contains(&c.voxels)));
    }
}
