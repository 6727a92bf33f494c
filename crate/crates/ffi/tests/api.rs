//! Exercises the C ABI from Rust through raw pointers.

use std::ffi::{CStr, CString};
use std::ptr;

use eroc_ffi::*;

fn last_error() -> String {
    let p = eroc_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn load(name: &str) -> *mut ErocConfig {
    let name = CString::new(name).unwrap();
    let mut cfg = ptr::null_mut();
    assert_eq!(
        unsafe { eroc_config_load(name.as_ptr(), ptr::null(), &mut cfg) },
        ErocStatus::Ok
    );
    cfg
}

#[test]
fn version_matches_the_crate() {
    let v = unsafe { CStr::from_ptr(eroc_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn analytic_scores_through_the_abi() {
    let cfg = load("bke");
    let (mut w, mut h, mut d) = (0, 0, 0);
    assert_eq!(
        unsafe { eroc_config_shape(cfg, &mut w, &mut h, &mut d) },
        ErocStatus::Ok
    );
    assert_eq!((w, h, d), (64, 64, 1));

    let mut ds = ptr::null_mut();
    assert_eq!(
        unsafe { eroc_dataset_generate(cfg, 30, 30, 5, &mut ds) },
        ErocStatus::Ok
    );
    assert_eq!(unsafe { eroc_dataset_len(ds) }, 60);

    let kind = CString::new("analytic-io").unwrap();
    let mut obs = ptr::null_mut();
    assert_eq!(
        unsafe { eroc_observer_create(cfg, kind.as_ptr(), ptr::null(), &mut obs) },
        ErocStatus::Ok
    );

    let spec = CString::new("gaussian:3").unwrap();
    let mut pixels = vec![0.0; w * h];
    let (mut tp, mut up, mut ta) = (Vec::new(), Vec::new(), Vec::new());
    for i in 0..60 {
        let mut present = false;
        let mut theta = [0.0];
        let s = unsafe {
            eroc_dataset_image(
                ds,
                i,
                pixels.as_mut_ptr(),
                pixels.len(),
                &mut present,
                theta.as_mut_ptr(),
                1,
            )
        };
        assert_eq!(s, ErocStatus::Ok);
        let (mut t, mut est) = (0.0, [0.0]);
        let s = unsafe { eroc_observer_score(obs, pixels.as_ptr(), w, h, 0, i as u64, &mut t, est.as_mut_ptr(), 1) };
        assert_eq!(s, ErocStatus::Ok);
        if present {
            let mut u = 0.0;
            assert_eq!(
                unsafe { eroc_utility_eval(spec.as_ptr(), est.as_ptr(), theta.as_ptr(), 1, &mut u) },
                ErocStatus::Ok
            );
            tp.push(t);
            up.push(u);
        } else {
            assert!(theta[0].is_nan());
            ta.push(t);
        }
    }
    let mut a = ErocAeroc::default();
    let s = unsafe {
        eroc_aeroc(
            tp.as_ptr(),
            up.as_ptr(),
            tp.len(),
            ta.as_ptr(),
            ta.len(),
            200,
            0.9,
            1,
            &mut a,
        )
    };
    assert_eq!(s, ErocStatus::Ok);
    assert!(a.ci_lo <= a.value && a.value <= a.ci_hi);
    assert!(a.value > 0.0 && a.value < 1.0);

    unsafe {
        eroc_observer_free(obs);
        eroc_dataset_free(ds);
        eroc_config_free(cfg);
    }
}

#[test]
fn errors_set_status_and_message() {
    let mut cfg = ptr::null_mut();
    let bad = CString::new("no-such-preset").unwrap();
    assert_eq!(
        unsafe { eroc_config_load(bad.as_ptr(), ptr::null(), &mut cfg) },
        ErocStatus::InvalidArgument
    );
    assert!(cfg.is_null());
    assert!(last_error().contains("no-such-preset"));

    let cfg = load("lb");
    let kind = CString::new("analytic-io").unwrap();
    let mut obs = ptr::null_mut();
    assert_eq!(
        unsafe { eroc_observer_create(cfg, kind.as_ptr(), ptr::null(), &mut obs) },
        ErocStatus::Unsupported
    );
    let kind = CString::new("hybrid").unwrap();
    assert_eq!(
        unsafe { eroc_observer_create(cfg, kind.as_ptr(), ptr::null(), &mut obs) },
        ErocStatus::InvalidArgument
    );
    assert!(last_error().contains("network"));

    let path = CString::new("/nonexistent/model.bin").unwrap();
    let mut model = ptr::null_mut();
    assert_eq!(
        unsafe { eroc_model_load(path.as_ptr(), &mut model) },
        ErocStatus::MissingArtifact
    );

    let mut a = ErocAeroc::default();
    assert_eq!(
        unsafe { eroc_aeroc(ptr::null(), ptr::null(), 3, ptr::null(), 0, 0, 0.9, 0, &mut a) },
        ErocStatus::NullArgument
    );
    let t = [1.0];
    assert_eq!(
        unsafe { eroc_aeroc(t.as_ptr(), t.as_ptr(), 1, ptr::null(), 0, 0, 0.9, 0, &mut a) },
        ErocStatus::InvalidArgument
    );

    let spec = CString::new("gaussian").unwrap();
    let mut u = 0.0;
    assert_eq!(
        unsafe { eroc_utility_eval(spec.as_ptr(), t.as_ptr(), t.as_ptr(), 1, &mut u) },
        ErocStatus::InvalidArgument
    );

    let mut ds = ptr::null_mut();
    assert_eq!(unsafe { eroc_dataset_generate(cfg, 1, 1, 0, &mut ds) }, ErocStatus::Ok);
    let mut px = vec![0.0; 3];
    let mut present = false;
    let s = unsafe { eroc_dataset_image(ds, 0, px.as_mut_ptr(), px.len(), &mut present, ptr::null_mut(), 0) };
    assert_eq!(s, ErocStatus::InvalidArgument);
    assert!(last_error().contains("pixels_len"));
    unsafe {
        eroc_dataset_free(ds);
        eroc_config_free(cfg);
        // Null handles are accepted by every destructor.
        eroc_config_free(ptr::null_mut());
        eroc_model_free(ptr::null_mut());
    }
}

#[test]
fn model_round_trips_through_a_file() {
    use eroc_core::nn::{save_model, Architecture, MultiTaskNet, Scaling};
    use rand::SeedableRng;

    let mut net = MultiTaskNet::new(Architecture::standard(8, 8, 1, 1, 2, 3, 1), Scaling::identity(1)).unwrap();
    net.init_weights(&mut rand_chacha::ChaCha8Rng::seed_from_u64(3));
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("model.bin");
    save_model(&net, &file).unwrap();

    let path = CString::new(file.to_str().unwrap()).unwrap();
    let mut model = ptr::null_mut();
    assert_eq!(unsafe { eroc_model_load(path.as_ptr(), &mut model) }, ErocStatus::Ok);
    let g: Vec<f64> = (0..64).map(|i| (i as f64 * 0.37).sin()).collect();
    let (mut lo, mut est) = (0.0, [0.0]);
    assert_eq!(
        unsafe { eroc_model_forward(model, g.as_ptr(), 8, 8, &mut lo, est.as_mut_ptr(), 1) },
        ErocStatus::Ok
    );
    // Weights are stored in single precision, so compare with a reloaded copy.
    let reloaded = eroc_core::nn::load_model(&file).unwrap();
    let direct = reloaded
        .forward(&eroc_core::image::Image::from_vec(8, 8, g).unwrap())
        .unwrap();
    assert_eq!(lo, direct.log_odds);
    assert_eq!(est[0], direct.estimate[0]);
    unsafe { eroc_model_free(model) };
}
