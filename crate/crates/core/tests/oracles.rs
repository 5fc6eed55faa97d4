use miae_core::autodiff::Tape;
use miae_core::degradation::{
    apply_psf, apply_srf, blur_and_downsample, downsample, make_box_srf, make_gaussian_kernel,
};
use miae_core::interp::{upsample_bilinear, upsample_nearest};
use miae_core::{BlurKernel, DenseArray, HyperCube, SrfMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_cube(b: usize, h: usize, w: usize, rng: &mut ChaCha8Rng) -> HyperCube {
    HyperCube::from_fn(b, h, w, |_, _, _| rng.random::<f64>())
}

fn random_kernel(k: usize, rng: &mut ChaCha8Rng) -> BlurKernel {
    BlurKernel::new(k, (0..k * k).map(|_| rng.random::<f64>()).collect()).unwrap()
}

fn mirror(i: isize, n: usize) -> usize {
    let n = n as isize;
    let mut i = i;
    loop {
        if i < 0 {
            i = -i - 1;
        } else if i >= n {
            i = 2 * n - i - 1;
        } else {
            return i as usize;
        }
    }
}

fn conv_oracle(x: &HyperCube, k: &BlurKernel) -> HyperCube {
    let half = k.half_width() as isize;
    let size = k.size();
    HyperCube::from_fn(x.bands(), x.height(), x.width(), |b, i, j| {
        let mut acc = 0.0;
        for u in 0..size {
            for v in 0..size {
                let r = mirror(i as isize + u as isize - half, x.height());
                let c = mirror(j as isize + v as isize - half, x.width());
                acc += k.weights()[u * size + v] * x.get(b, r, c);
            }
        }
        acc
    })
}

#[test]
fn blur_matches_direct_correlation() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for (h, w, k) in [(9, 9, 3), (12, 10, 5), (7, 16, 7)] {
        let x = random_cube(2, h, w, &mut rng);
        let ker = random_kernel(k, &mut rng);
        let got = apply_psf(&x, &ker).unwrap();
        let want = conv_oracle(&x, &ker);
        for (a, b) in got.data().iter().zip(want.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn fused_blur_decimate_equals_blur_then_subsample() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for (ratio, offset, k) in [(2, 0, 3), (2, 1, 5), (4, 2, 7), (3, 1, 5)] {
        let x = random_cube(3, 12, 12, &mut rng);
        let ker = random_kernel(k, &mut rng);
        let fused = blur_and_downsample(&x, &ker, ratio, offset).unwrap();
        let split = downsample(&conv_oracle(&x, &ker), ratio, offset).unwrap();
        assert_eq!(fused.dims(), split.dims());
        for (a, b) in fused.data().iter().zip(split.data()) {
            assert!((a - b).abs() < 1e-12);
        }

        let mut tape = Tape::new();
        let xv = tape.constant(x.to_array());
        let kv = tape.constant(DenseArray::new(vec![k, k], ker.weights().to_vec()).unwrap());
        let taped = tape.blur_decimate(xv, kv, ratio, offset).unwrap();
        let blurred = tape.conv2d_perband(xv, kv).unwrap();
        let sub = tape.subsample(blurred, ratio, offset).unwrap();
        assert!(tape.value(taped).max_abs_diff(tape.value(sub)) < 1e-12);
        assert!(tape.value(taped).max_abs_diff(&fused.to_array()) < 1e-12);
    }
}

#[test]
fn delta_kernel_is_identity_on_value_and_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let x = random_cube(2, 6, 6, &mut rng);
    let delta = BlurKernel::delta(3).unwrap();
    assert_eq!(apply_psf(&x, &delta).unwrap().data(), x.data());

    let mut tape = Tape::new();
    let xv = tape.leaf(x.to_array());
    let kv = tape.constant(DenseArray::new(vec![3, 3], delta.weights().to_vec()).unwrap());
    let y = tape.conv2d_perband(xv, kv).unwrap();
    let target = tape.constant(DenseArray::full(&[2, 6, 6], 2.0));
    let loss = tape.l1_loss(y, target).unwrap();
    let g = tape.backward(loss).unwrap();
    assert!(g.get(xv).unwrap().data().iter().all(|&v| v == -1.0));
}

#[test]
fn srf_matches_matrix_vector_product() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let x = random_cube(7, 5, 4, &mut rng);
    let srf = SrfMatrix::project(3, 7, (0..21).map(|_| rng.random::<f64>()).collect()).unwrap();
    let z = apply_srf(&x, &srf).unwrap();
    for i in 0..5 {
        for j in 0..4 {
            let s = x.spectrum(i, j);
            for m in 0..3 {
                let want: f64 = srf.row(m).iter().zip(&s).map(|(a, b)| a * b).sum();
                assert!((z.get(m, i, j) - want).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn box_srf_splits_remainder_over_first_groups() {
    let r = make_box_srf(10, 3).unwrap();
    let widths: Vec<usize> = (0..3)
        .map(|m| r.row(m).iter().filter(|&&v| v > 0.0).count())
        .collect();
    assert_eq!(widths, vec![4, 3, 3]);
    assert_eq!(r.row(0)[..4], [0.25; 4]);
    assert_eq!(r.row(2)[7..], [1.0 / 3.0; 3]);
}

#[test]
fn bilinear_matches_half_pixel_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let x = random_cube(2, 4, 5, &mut rng);
    for ratio in [2, 3, 4] {
        let up = upsample_bilinear(&x, ratio).unwrap();
        for b in 0..2 {
            for i in 0..4 * ratio {
                for j in 0..5 * ratio {
                    let sy = ((i as f64 + 0.5) / ratio as f64 - 0.5).clamp(0.0, 3.0);
                    let sx = ((j as f64 + 0.5) / ratio as f64 - 0.5).clamp(0.0, 4.0);
                    let (y0, x0) = (sy.floor() as usize, sx.floor() as usize);
                    let (y1, x1) = ((y0 + 1).min(3), (x0 + 1).min(4));
                    let (ty, tx) = (sy - y0 as f64, sx - x0 as f64);
                    let want = (1.0 - ty) * (1.0 - tx) * x.get(b, y0, x0)
                        + (1.0 - ty) * tx * x.get(b, y0, x1)
                        + ty * (1.0 - tx) * x.get(b, y1, x0)
                        + ty * tx * x.get(b, y1, x1);
                    assert!((up.get(b, i, j) - want).abs() < 1e-12);
                }
            }
        }
    }
}

#[test]
fn upsampling_reproduces_constants_and_blocks() {
    let c = HyperCube::filled(3, 4, 4, 0.37);
    assert!(upsample_bilinear(&c, 4).unwrap().data().iter().all(|&v| v == 0.37));
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let x = random_cube(1, 3, 3, &mut rng);
    let up = upsample_nearest(&x, 2).unwrap();
    for i in 0..6 {
        for j in 0..6 {
            assert_eq!(up.get(0, i, j), x.get(0, i / 2, j / 2));
        }
    }
}

#[test]
fn gaussian_center_weight_matches_two_loop_sum() {
    let k = make_gaussian_kernel(15, 3.4).unwrap();
    let mut total = 0.0;
    for i in 0..15 {
        for j in 0..15 {
            let (di, dj) = (i as f64 - 7.0, j as f64 - 7.0);
            total += (-(di * di + dj * dj) / (2.0 * 3.4 * 3.4)).exp();
        }
    }
    assert!((k.weights()[7 * 15 + 7] - 1.0 / total).abs() < 1e-15);
    assert!((k.sum() - 1.0).abs() < 1e-12);
}

#[test]
fn fully_connected_gradient_matches_outer_product() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let w = DenseArray::new(vec![5, 7], (0..35).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    let x = DenseArray::new(vec![7, 1], (0..7).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    let mut tape = Tape::new();
    let wv = tape.leaf(w.clone());
    let xv = tape.leaf(x.clone());
    let bv = tape.leaf(DenseArray::zeros(&[5]));
    let y = tape.fully_connected(xv, wv, bv).unwrap();
    // sum(y) as the loss: ‖y − (−100)‖₁ with every y well above −100
    let floor = tape.constant(DenseArray::full(&[5, 1], -100.0));
    let loss = tape.l1_loss(y, floor).unwrap();
    let g = tape.backward(loss).unwrap();
    let gw = g.get(wv).unwrap();
    for i in 0..5 {
        for j in 0..7 {
            assert!((gw.data()[i * 7 + j] - x.data()[j]).abs() < 1e-10);
        }
    }
    let gx = g.get(xv).unwrap();
    for j in 0..7 {
        let col: f64 = (0..5).map(|i| w.data()[i * 7 + j]).sum();
        assert!((gx.data()[j] - col).abs() < 1e-10);
    }
    assert!(g.get(bv).unwrap().data().iter().all(|&v| v == 1.0));
}
