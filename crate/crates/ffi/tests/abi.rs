use std::ffi::{c_char, CString};
use std::ptr;

use pixagg::nn::{checkpoint, ModelConfig, PanModel};
use pixagg_ffi::*;

fn last_error() -> String {
    let mut buf = vec![0u8; 256];
    let n = unsafe { px_last_error(buf.as_mut_ptr().cast::<c_char>(), buf.len()) };
    buf.truncate(n.min(255));
    String::from_utf8(buf).unwrap()
}

fn tensor(shape: &[usize], data: &[f32]) -> *mut PxTensor {
    let mut t = ptr::null_mut();
    let st = unsafe { px_tensor_new(shape.as_ptr(), shape.len(), data.as_ptr(), &mut t) };
    assert_eq!(st, PxStatus::Ok);
    t
}

fn contents(t: *const PxTensor) -> Vec<f32> {
    unsafe { std::slice::from_raw_parts(px_tensor_data(t), px_tensor_len(t)).to_vec() }
}

#[test]
fn tensor_lifecycle() {
    let t = tensor(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
    unsafe {
        assert_eq!(px_tensor_rank(t), 2);
        assert_eq!(px_tensor_len(t), 6);
        let mut dims = [0usize; 4];
        assert_eq!(px_tensor_shape(t, dims.as_mut_ptr(), 4), PxStatus::Ok);
        assert_eq!(&dims[..2], &[2, 3]);
        assert_eq!(px_tensor_shape(t, dims.as_mut_ptr(), 1), PxStatus::InvalidShape);
        assert_eq!(contents(t), vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);

        let mut z = ptr::null_mut();
        assert_eq!(px_tensor_new([2usize, 2].as_ptr(), 2, ptr::null(), &mut z), PxStatus::Ok);
        assert_eq!(contents(z), vec![0.0; 4]);
        px_tensor_free(z);
        px_tensor_free(t);
        px_tensor_free(ptr::null_mut());
    }
}

#[test]
fn errors_carry_status_and_message() {
    unsafe {
        let mut t = ptr::null_mut();
        assert_eq!(px_tensor_new([2usize, 0].as_ptr(), 2, ptr::null(), &mut t), PxStatus::InvalidShape);
        assert!(t.is_null());
        assert!(!last_error().is_empty());

        assert_eq!(px_tensor_new(ptr::null(), 2, ptr::null(), &mut t), PxStatus::NullPointer);
        assert!(last_error().contains("shape"));

        let mut out = 0.0f32;
        assert_eq!(px_bilinear_sample(ptr::null(), 0.0, 0.0, &mut out), PxStatus::NullPointer);

        let mut g = ptr::null_mut();
        assert_eq!(px_grid_new(2, [3usize, 4].as_ptr(), &mut g), PxStatus::InvalidGrid);

        let x = tensor(&[2, 2], &[0.5; 4]);
        let mut y = ptr::null_mut();
        let rng = px_rng_new(1);
        assert_eq!(px_add_noise(x, -1.0, 0.1, rng, &mut y), PxStatus::InvalidParams);
        px_rng_free(rng);
        px_tensor_free(x);

        assert_eq!(px_tensor_new([1usize].as_ptr(), 1, ptr::null(), &mut t), PxStatus::Ok);
        assert_eq!(last_error(), "");
        px_tensor_free(t);
    }
}

#[test]
fn error_message_is_truncated_and_terminated() {
    unsafe {
        let mut t = ptr::null_mut();
        px_tensor_new(ptr::null(), 1, ptr::null(), &mut t);
        let full = px_last_error(ptr::null_mut(), 0);
        let mut buf = [0x7fu8; 5];
        assert_eq!(px_last_error(buf.as_mut_ptr().cast(), buf.len()), full);
        assert_eq!(buf[4], 0);
        assert!(full > 4);
    }
}

#[test]
fn sampling_matches_grid_values() {
    let x = tensor(&[2, 2], &[0.0, 1.0, 2.0, 3.0]);
    let v = tensor(&[2, 2, 2], &[0.0, 4.0, 1.0, 5.0, 2.0, 6.0, 3.0, 7.0]);
    unsafe {
        let mut out = 0.0f32;
        assert_eq!(px_bilinear_sample(x, 1.0, 1.0, &mut out), PxStatus::Ok);
        assert_eq!(out, 3.0);
        assert_eq!(px_bilinear_sample(x, 0.5, 0.5, &mut out), PxStatus::Ok);
        assert!((out - 1.5).abs() < 1e-6);
        assert_eq!(px_trilinear_sample(v, 0.0, 1.0, 0.5, &mut out), PxStatus::Ok);
        assert!((out - 3.0).abs() < 1e-6);
        assert_eq!(px_bilinear_sample(v, 0.0, 0.0, &mut out), PxStatus::InvalidShape);
        px_tensor_free(x);
        px_tensor_free(v);
    }
}

#[test]
fn one_hot_center_aggregation_is_identity() {
    let (h, w, n) = (3usize, 4usize, 9usize);
    let data: Vec<f32> = (0..h * w).map(|i| i as f32 * 0.1).collect();
    let x = tensor(&[h, w], &data);
    let offsets = tensor(&[h, w, n, 2], &vec![0.0; h * w * n * 2]);
    let mut weights = vec![0.0f32; h * w * n];
    for p in 0..h * w {
        weights[p * n + n / 2] = 1.0;
    }
    let weights = tensor(&[h, w, n], &weights);
    unsafe {
        let mut g = ptr::null_mut();
        assert_eq!(px_grid_new(2, [3usize, 3].as_ptr(), &mut g), PxStatus::Ok);
        assert_eq!(px_grid_len(g), 9);
        let mut y = ptr::null_mut();
        assert_eq!(px_aggregate(x, g, offsets, weights, &mut y), PxStatus::Ok);
        assert_eq!(contents(y), data);
        px_tensor_free(y);
        px_grid_free(g);
        for t in [x, offsets, weights] {
            px_tensor_free(t);
        }
    }
}

#[test]
fn noise_and_metrics() {
    assert!((px_inverse_gamma(px_gamma(0.3)) - 0.3).abs() < 1e-9);
    assert!((px_anneal_coeff(100.0, 0.9998, 0) - 100.0).abs() < 1e-12);
    let x = tensor(&[32, 32], &[0.5; 1024]);
    unsafe {
        let rng = px_rng_new(3);
        let mut y = ptr::null_mut();
        assert_eq!(px_add_noise(x, 0.0, 0.1, rng, &mut y), PxStatus::Ok);
        let mut p = 0.0;
        assert_eq!(px_psnr(y, x, &mut p), PxStatus::Ok);
        assert!((p - 20.0).abs() < 0.5, "{p}");
        let mut s = 0.0;
        assert_eq!(px_ssim(x, x, &mut s), PxStatus::Ok);
        assert!((s - 1.0).abs() < 1e-9);
        assert_eq!(px_psnr(x, x, &mut p), PxStatus::Ok);
        assert_eq!(p, f64::INFINITY);
        px_rng_free(rng);
        px_tensor_free(y);
        px_tensor_free(x);
    }
}

#[test]
fn noise_is_seeded() {
    let x = tensor(&[4, 4], &[0.2; 16]);
    let draw = |seed| unsafe {
        let rng = px_rng_new(seed);
        let mut y = ptr::null_mut();
        px_add_noise(x, 0.01, 0.05, rng, &mut y);
        let v = contents(y);
        px_tensor_free(y);
        px_rng_free(rng);
        v
    };
    assert_eq!(draw(9), draw(9));
    assert_ne!(draw(9), draw(10));
    unsafe { px_tensor_free(x) };
}

#[test]
fn tensor_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("t.pxt").to_str().unwrap()).unwrap();
    let t = tensor(&[2, 1, 3], &[1.0, -2.0, 3.5, 0.0, 7.0, 8.0]);
    unsafe {
        assert_eq!(px_tensor_write(t, path.as_ptr()), PxStatus::Ok);
        let mut back = ptr::null_mut();
        assert_eq!(px_tensor_read(path.as_ptr(), &mut back), PxStatus::Ok);
        assert_eq!(px_tensor_rank(back), 3);
        assert_eq!(contents(back), contents(t));
        px_tensor_free(back);
        px_tensor_free(t);

        let missing = CString::new(dir.path().join("none.pxt").to_str().unwrap()).unwrap();
        assert_eq!(px_tensor_read(missing.as_ptr(), &mut back), PxStatus::NotFound);
        std::fs::write(dir.path().join("bad.pxt"), b"NOPE0000").unwrap();
        let bad = CString::new(dir.path().join("bad.pxt").to_str().unwrap()).unwrap();
        assert_eq!(px_tensor_read(bad.as_ptr(), &mut back), PxStatus::BadMagic);
    }
}

#[test]
fn model_denoises_through_handles() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("m.pxc");
    let model = PanModel::zeros(ModelConfig::stpan()).unwrap();
    checkpoint::save(&file, &model, 0).unwrap();
    let path = CString::new(file.to_str().unwrap()).unwrap();
    unsafe {
        let mut m = ptr::null_mut();
        assert_eq!(px_model_load(path.as_ptr(), &mut m), PxStatus::Ok);
        assert_eq!(px_model_frames(m), 5);

        let frames = tensor(&[5, 12, 20], &vec![0.4; 5 * 12 * 20]);
        let mut y = ptr::null_mut();
        assert_eq!(px_model_denoise(m, frames, -1.0, -1.0, &mut y), PxStatus::Ok);
        let mut dims = [0usize; 2];
        px_tensor_shape(y, dims.as_mut_ptr(), 2);
        assert_eq!(dims, [12, 20]);
        assert!(contents(y).iter().all(|&v| v == 0.0));
        px_tensor_free(y);

        let wrong = tensor(&[3, 8, 8], &[0.0; 192]);
        assert_eq!(px_model_denoise(m, wrong, -1.0, -1.0, &mut y), PxStatus::Config);
        px_tensor_free(wrong);
        px_tensor_free(frames);
        px_model_free(m);
    }
}

#[test]
fn non_blind_model_needs_noise_parameters() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("nb.pxc");
    let cfg = ModelConfig { blind: false, ..ModelConfig::pan() };
    checkpoint::save(&file, &PanModel::zeros(cfg).unwrap(), 0).unwrap();
    let path = CString::new(file.to_str().unwrap()).unwrap();
    unsafe {
        let mut m = ptr::null_mut();
        assert_eq!(px_model_load(path.as_ptr(), &mut m), PxStatus::Ok);
        assert_eq!(px_model_frames(m), 1);
        let frames = tensor(&[1, 8, 8], &[0.3; 64]);
        let mut y = ptr::null_mut();
        assert_eq!(px_model_denoise(m, frames, -1.0, 0.1, &mut y), PxStatus::InvalidParams);
        assert_eq!(px_model_denoise(m, frames, 0.001, 0.01, &mut y), PxStatus::Ok);
        px_tensor_free(y);
        px_tensor_free(frames);
        px_model_free(m);
    }
}

#[test]
fn header_declares_the_api() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/pixagg.h")).unwrap();
    for name in [
        "px_last_error",
        "px_tensor_new",
        "px_aggregate",
        "px_model_denoise",
        "PX_STATUS_NULL_POINTER",
        "typedef struct PxTensor PxTensor",
    ] {
        assert!(header.contains(name), "{name} missing from header");
    }
}
