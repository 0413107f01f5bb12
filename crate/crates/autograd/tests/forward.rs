use proptest::prelude::*;
use scd_autograd::{Tensor, Var};

/// Direct nested-loop convolution.
fn naive_conv(x: &Tensor, w: &Tensor, stride: usize, pad: usize) -> Tensor {
    let (n, c, h, wd) = x.dims4().unwrap();
    let (o, _, kh, kw) = w.dims4().unwrap();
    let ho = (h + 2 * pad - kh) / stride + 1;
    let wo = (wd + 2 * pad - kw) / stride + 1;
    let mut y = Tensor::zeros(&[n, o, ho, wo]);
    for b in 0..n {
        for oc in 0..o {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut s = 0.0;
                    for ci in 0..c {
                        for ki in 0..kh {
                            for kj in 0..kw {
                                let iy = (oy * stride + ki) as isize - pad as isize;
                                let ix = (ox * stride + kj) as isize - pad as isize;
                                if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd {
                                    s += x.at(&[b, ci, iy as usize, ix as usize])
                                        * w.at(&[oc, ci, ki, kj]);
                                }
                            }
                        }
                    }
                    y.set(&[b, oc, oy, ox], s);
                }
            }
        }
    }
    y
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn conv_matches_nested_loops(
        n in 1usize..3, c in 1usize..4, o in 1usize..4, h in 3usize..9, w in 3usize..9,
        k in prop::sample::select(vec![1usize, 3, 5]), stride in 1usize..3, seed in 0u64..1000,
    ) {
        let pad = k / 2;
        let x = Tensor::from_fn(&[n, c, h, w], |i| ((i as u64 * 2654435761 + seed) % 97) as f64 / 48.0 - 1.0);
        let wt = Tensor::from_fn(&[o, c, k, k], |i| ((i as u64 * 40503 + seed) % 89) as f64 / 44.0 - 1.0);
        let got = Var::constant(x.clone()).conv2d(&Var::constant(wt.clone()), None, stride, pad).unwrap();
        let want = naive_conv(&x, &wt, stride, pad);
        prop_assert_eq!(got.shape(), want.shape());
        for (a, b) in got.value().data().iter().zip(want.data()) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_rows_sum_to_one(vals in prop::collection::vec(-30.0f64..30.0, 12)) {
        let x = Var::constant(Tensor::new(&[3, 4], vals).unwrap());
        let y = x.softmax(1).unwrap();
        for r in 0..3 {
            let s: f64 = (0..4).map(|c| y.value().at(&[r, c])).sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn bilinear_upsampling_matches_half_pixel_convention() {
    // 1-D ramp upsampled 2x: half-pixel centres clamp at the borders.
    let x = Var::constant(Tensor::new(&[1, 1, 1, 2], vec![0.0, 1.0]).unwrap());
    let y = x.resize_bilinear(1, 4).unwrap();
    assert_eq!(y.value().data(), &[0.0, 0.25, 0.75, 1.0]);
}

#[test]
fn constants_build_no_graph() {
    let x = Var::constant(Tensor::ones(&[2, 2]));
    let y = x.scale(2.0).sum_all();
    assert!(!y.requires_grad());
    assert!(y.backward().get(&x).is_none());
}

#[test]
fn max_pool_ignores_padding() {
    let x = Var::constant(Tensor::full(&[1, 1, 2, 2], -5.0));
    let y = x.max_pool2d(3, 2, 1).unwrap();
    assert_eq!(y.value().data(), &[-5.0]);
}
