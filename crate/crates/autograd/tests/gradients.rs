use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use scd_autograd::gradcheck::{central_difference, relative_error};
use scd_autograd::{Tensor, Var};

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

fn positive(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(0.2..2.0))
}

/// Checks d/dinput of `sum(f(inputs) ⊙ probe)` for every input element.
fn check(inputs: Vec<Tensor>, f: impl Fn(&[Var]) -> Var) {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let vars: Vec<Var> = inputs.iter().cloned().map(Var::leaf).collect();
    let out = f(&vars);
    let probe = Var::constant(random(&mut rng, out.shape()));
    let loss = out.mul(&probe).unwrap().sum_all();
    let grads = loss.backward();

    for (k, x) in inputs.iter().enumerate() {
        let analytic = grads.get(&vars[k]).expect("gradient present");
        assert_eq!(analytic.shape(), x.shape());
        for i in 0..x.numel() {
            let numeric = central_difference(
                |probe_x| {
                    let vs: Vec<Var> = inputs
                        .iter()
                        .enumerate()
                        .map(|(j, t)| {
                            Var::constant(if j == k { probe_x.clone() } else { t.clone() })
                        })
                        .collect();
                    f(&vs).mul(&probe).unwrap().sum_all().value().item()
                },
                x,
                i,
                1e-6,
            );
            let err = relative_error(analytic.data()[i], numeric, 1e-6);
            assert!(
                err < 1e-5,
                "input {k} element {i}: analytic {} numeric {numeric}",
                analytic.data()[i]
            );
        }
    }
}

#[test]
fn elementwise_unary() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = random(&mut rng, &[2, 3, 4]);
    check(vec![x.clone()], |v| v[0].sigmoid());
    check(vec![x.clone()], |v| v[0].exp());
    check(vec![x.clone()], |v| v[0].square());
    check(vec![x.clone()], |v| v[0].relu());
    check(vec![x.clone()], |v| v[0].abs());
    check(vec![x.clone()], |v| v[0].scale(-2.5).add_scalar(0.3));
    check(vec![x], |v| v[0].clamp(-0.5, 0.5));
    let p = positive(&mut rng, &[5, 3]);
    check(vec![p.clone()], |v| v[0].ln());
    check(vec![p], |v| v[0].sqrt());
}

#[test]
fn broadcasting_binary() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let a = random(&mut rng, &[2, 3, 4, 4]);
    let c = random(&mut rng, &[2, 3, 1, 1]);
    let s = random(&mut rng, &[2, 1, 4, 4]);
    check(vec![a.clone(), c.clone()], |v| v[0].mul(&v[1]).unwrap());
    check(vec![a.clone(), s.clone()], |v| v[0].mul(&v[1]).unwrap());
    check(vec![c.clone(), a.clone()], |v| v[0].add(&v[1]).unwrap());
    check(vec![a.clone(), s], |v| v[0].sub(&v[1]).unwrap());
    let d = positive(&mut rng, &[2, 3, 1, 1]);
    check(vec![a, d], |v| v[0].div(&v[1]).unwrap());
}

#[test]
fn reductions_and_softmax() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = random(&mut rng, &[2, 3, 4, 5]);
    check(vec![x.clone()], |v| v[0].sum_dims(&[0, 2, 3]).unwrap());
    check(vec![x.clone()], |v| v[0].mean_dims(&[1]).unwrap());
    check(vec![x.clone()], |v| v[0].max_dims(&[2, 3]).unwrap());
    check(vec![x.clone()], |v| v[0].max_dims(&[1]).unwrap());
    check(vec![x.clone()], |v| v[0].softmax(1).unwrap());
    check(vec![x.clone()], |v| v[0].softmax(3).unwrap());
    check(vec![x], |v| v[0].mean_all());
}

#[test]
fn shape_ops() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let a = random(&mut rng, &[2, 3, 2, 2]);
    let b = random(&mut rng, &[2, 1, 2, 2]);
    check(vec![a.clone(), b], |v| {
        Var::concat(&[&v[0], &v[1]], 1).unwrap()
    });
    check(vec![a.clone()], |v| v[0].permute(&[0, 2, 3, 1]).unwrap());
    check(vec![a.clone()], |v| v[0].narrow(1, 1, 2).unwrap());
    check(vec![a], |v| v[0].reshape(&[6, 4]).unwrap());
}

#[test]
fn matmul_batched_and_shared() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let a = random(&mut rng, &[2, 3, 4]);
    let b = random(&mut rng, &[2, 4, 5]);
    let w = random(&mut rng, &[4, 2]);
    check(vec![a.clone(), b], |v| v[0].matmul(&v[1]).unwrap());
    check(vec![a, w], |v| v[0].matmul(&v[1]).unwrap());
}

#[test]
fn convolution_and_pooling() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x = random(&mut rng, &[2, 3, 6, 5]);
    let w3 = random(&mut rng, &[4, 3, 3, 3]);
    let b = random(&mut rng, &[4]);
    check(vec![x.clone(), w3.clone(), b.clone()], |v| {
        v[0].conv2d(&v[1], Some(&v[2]), 1, 1).unwrap()
    });
    check(vec![x.clone(), w3], |v| {
        v[0].conv2d(&v[1], None, 2, 1).unwrap()
    });
    let w7 = random(&mut rng, &[2, 3, 7, 7]);
    check(vec![x.clone(), w7], |v| {
        v[0].conv2d(&v[1], None, 2, 3).unwrap()
    });
    let w1 = random(&mut rng, &[5, 3, 1, 1]);
    check(vec![x.clone(), w1], |v| {
        v[0].conv2d(&v[1], None, 2, 0).unwrap()
    });
    check(vec![x], |v| v[0].max_pool2d(3, 2, 1).unwrap());
}

#[test]
fn batch_norm_both_modes() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x = random(&mut rng, &[3, 2, 3, 3]);
    let g = positive(&mut rng, &[2]);
    let b = random(&mut rng, &[2]);
    check(vec![x.clone(), g.clone(), b.clone()], |v| {
        v[0].batch_norm_train(&v[1], &v[2], 1e-5).unwrap().0
    });
    let rm = random(&mut rng, &[2]);
    let rv = positive(&mut rng, &[2]);
    check(vec![x, g, b], |v| {
        v[0].batch_norm_eval(&v[1], &v[2], &rm, &rv, 1e-5).unwrap()
    });
}

#[test]
fn bilinear_resize() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x = random(&mut rng, &[1, 2, 3, 4]);
    check(vec![x.clone()], |v| v[0].resize_bilinear(6, 8).unwrap());
    check(vec![x.clone()], |v| v[0].resize_bilinear(12, 16).unwrap());
    check(vec![x], |v| v[0].resize_bilinear(2, 3).unwrap());
}

#[test]
fn shared_leaf_accumulates() {
    let x = Var::leaf(Tensor::new(&[2], vec![1.5, -2.0]).unwrap());
    let y = x.mul(&x).unwrap().add(&x).unwrap().sum_all();
    let g = y.backward();
    assert_eq!(g.get(&x).unwrap().data(), &[4.0, -3.0]);
}
