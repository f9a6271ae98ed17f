//! Brute-force oracles shared by the integration tests.
//!
//! Each oracle is an independent re-derivation of a contract, written as the
//! most literal implementation available — quadratic pair counting, an
//! explicitly materialized zero-padded array — so that agreement with the
//! library is evidence of correctness rather than the same code run twice.

#![allow(dead_code)] // each test binary uses a subset of the oracles

use sspcab_core::numcore::{ConvParams, NumError, Tensor};

/// ROC-AUC by counting all (positive, negative) pairs: the fraction ranked
/// correctly, ties credited one half. O(P·N); returns `None` when either
/// class is missing.
pub fn pairwise_auc(scores: &[f64], labels: &[u8]) -> Option<f64> {
    let mut wins = 0.0_f64;
    let mut pairs = 0u64;
    for (sp, lp) in scores.iter().zip(labels) {
        if *lp != 1 {
            continue;
        }
        for (sn, ln) in scores.iter().zip(labels) {
            if *ln != 0 {
                continue;
            }
            pairs += 1;
            if sp > sn {
                wins += 1.0;
            } else if sp == sn {
                wins += 0.5;
            }
        }
    }
    if pairs == 0 {
        None
    } else {
        Some(wins / pairs as f64)
    }
}

/// Average precision by an explicit threshold sweep. Items are ranked by
/// descending score with ties broken by ascending index (the library's
/// documented tie rule); precision and recall at every cut are recomputed
/// from scratch by re-scanning the prefix. Returns `None` without positives.
pub fn sweep_ap(scores: &[f64], labels: &[u8]) -> Option<f64> {
    let positives = labels.iter().filter(|&&l| l == 1).count();
    if positives == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .expect("oracle scores must be comparable")
            .then(a.cmp(&b))
    });
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for cut in 1..=order.len() {
        let tp = order[..cut].iter().filter(|&&i| labels[i] == 1).count();
        let precision = tp as f64 / cut as f64;
        let recall = tp as f64 / positives as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    Some(ap)
}

/// Direct-definition convolution over an explicitly materialized zero-padded
/// copy of the input. Same contract as the library layer (`x` is
/// `(n, h, w, c_in)`, weights `(c_out, kh, kw, c_in)`), entirely different
/// construction: no bounds tests, no skipped taps.
pub fn naive_conv2d(x: &Tensor, p: &ConvParams) -> Result<Tensor, NumError> {
    let xd = x.expect_rank("naive_conv2d input", 4)?;
    let (n, h, w, c_in) = (xd[0], xd[1], xd[2], xd[3]);
    let wd = p.weights.shape();
    let (c_out, kh, kw) = (wd[0], wd[1], wd[2]);
    assert_eq!(wd[3], c_in, "oracle called with mismatched channels");

    let pad = p.padding;
    let (ph, pw) = (h + 2 * pad, w + 2 * pad);
    let mut padded = vec![0.0_f64; n * ph * pw * c_in];
    for b in 0..n {
        for i in 0..h {
            for j in 0..w {
                for c in 0..c_in {
                    padded[((b * ph + i + pad) * pw + j + pad) * c_in + c] =
                        x.data()[((b * h + i) * w + j) * c_in + c];
                }
            }
        }
    }

    let oh = (ph - kh) / p.stride + 1;
    let ow = (pw - kw) / p.stride + 1;
    let mut out = Tensor::zeros(&[n, oh, ow, c_out]);
    let od = out.data_mut();
    let ws = p.weights.data();
    let bs = p.bias.data();
    for b in 0..n {
        for oi in 0..oh {
            for oj in 0..ow {
                for co in 0..c_out {
                    let mut acc = bs[co];
                    for ki in 0..kh {
                        for kj in 0..kw {
                            for ci in 0..c_in {
                                let xv = padded[((b * ph + oi * p.stride + ki) * pw
                                    + oj * p.stride
                                    + kj)
                                    * c_in
                                    + ci];
                                let wv = ws[((co * kh + ki) * kw + kj) * c_in + ci];
                                acc += xv * wv;
                            }
                        }
                    }
                    od[((b * oh + oi) * ow + oj) * c_out + co] = acc;
                }
            }
        }
    }
    Ok(out)
}

/// Largest absolute element-wise difference between two equally shaped tensors.
pub fn max_abs_diff(a: &Tensor, b: &Tensor) -> f64 {
    assert_eq!(a.shape(), b.shape(), "oracle comparison shapes differ");
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}
