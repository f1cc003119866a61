use std::ffi::{CStr, CString};
use std::ptr;

use guidelab::guidance::{sample_batch, GuidanceConfig, StabilizerConfig, StabilizerState};
use guidelab::{eval, AnalyticDenoiser, ClassifierHandle, GmmSpec, GuidancePath, JacobianMode, Mlp, Activation, Schedule};
use guidelab_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(gl_last_error()) }.to_string_lossy().into_owned()
}

struct Fixture {
    schedule: *mut GlSchedule,
    denoiser: *mut GlDenoiser,
}

impl Fixture {
    fn new(spec: &str) -> Self {
        let mut schedule = ptr::null_mut();
        let mut denoiser = ptr::null_mut();
        let spec = CString::new(spec).unwrap();
        unsafe {
            assert_eq!(gl_schedule_linear(400, 1e-4, 0.02, false, &mut schedule), GlStatus::Ok);
            assert_eq!(gl_denoiser_new(spec.as_ptr(), schedule, &mut denoiser), GlStatus::Ok, "{}", last_error());
        }
        Fixture { schedule, denoiser }
    }
}

impl Drop for Fixture {
    fn drop(&mut self) {
        unsafe {
            gl_denoiser_free(self.denoiser);
            gl_schedule_free(self.schedule);
        }
    }
}

#[test]
fn version_and_status_names() {
    let v = unsafe { CStr::from_ptr(gl_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
    let name = unsafe { CStr::from_ptr(gl_status_name(GlStatus::DimensionMismatch)) };
    assert_eq!(name.to_str().unwrap(), "dimension_mismatch");
}

#[test]
fn schedule_matches_core() {
    let fx = Fixture::new("weighted-xor");
    let core = Schedule::linear(400, 1e-4, 0.02).unwrap();
    unsafe {
        assert_eq!(gl_schedule_steps(fx.schedule), 400);
        for t in [0, 1, 17, 400] {
            let mut ab = f64::NAN;
            assert_eq!(gl_schedule_alpha_bar(fx.schedule, t, &mut ab), GlStatus::Ok);
            assert_eq!(ab, core.alpha_bar(t));
        }
        let mut ab = 0.0;
        assert_eq!(gl_schedule_alpha_bar(fx.schedule, 401, &mut ab), GlStatus::OutOfRange);
        assert!(last_error().contains("401"));
    }
}

#[test]
fn bad_inputs_report_codes() {
    let mut s = ptr::null_mut();
    let mut d = ptr::null_mut();
    unsafe {
        assert_eq!(gl_schedule_linear(0, 1e-4, 0.02, false, &mut s), GlStatus::InvalidArgument);
        assert!(!last_error().is_empty());
        assert_eq!(gl_schedule_linear(10, 1e-4, 0.02, false, ptr::null_mut()), GlStatus::NullPointer);
        assert_eq!(gl_schedule_linear(10, 1e-4, 0.02, false, &mut s), GlStatus::Ok);
        assert!(last_error().is_empty());

        let bogus = CString::new("no-such-preset").unwrap();
        assert_ne!(gl_denoiser_new(bogus.as_ptr(), s, &mut d), GlStatus::Ok);
        assert!(d.is_null());
        let bad_json = CString::new("{\"classes\": ").unwrap();
        assert_eq!(gl_denoiser_new(bad_json.as_ptr(), s, &mut d), GlStatus::Parse);
        assert_eq!(gl_denoiser_new(ptr::null(), s, &mut d), GlStatus::NullPointer);
        let invalid = [0xffu8, 0];
        assert_eq!(gl_denoiser_new(invalid.as_ptr().cast(), s, &mut d), GlStatus::InvalidUtf8);

        let mut st = ptr::null_mut();
        let kind = CString::new("ema:1.5").unwrap();
        assert_ne!(gl_stabilizer_new(kind.as_ptr(), 2, &mut st), GlStatus::Ok);
        assert!(st.is_null());

        assert_eq!(gl_schedule_steps(ptr::null()), 0);
        gl_schedule_free(s);
        gl_schedule_free(ptr::null_mut());
        gl_denoiser_free(ptr::null_mut());
        gl_classifier_free(ptr::null_mut());
        gl_stabilizer_free(ptr::null_mut());
    }
}

#[test]
fn posterior_mean_matches_core() {
    let fx = Fixture::new("weighted-xor");
    let spec = GmmSpec::preset("weighted-xor").unwrap();
    let dn = AnalyticDenoiser::new(&spec, &Schedule::linear(400, 1e-4, 0.02).unwrap()).unwrap();
    let x = [0.7, -1.3];
    let mut out = [0.0; 2];
    unsafe {
        assert_eq!(gl_denoiser_dim(fx.denoiser), 2);
        assert_eq!(gl_denoiser_posterior_mean(fx.denoiser, x.as_ptr(), 2, 150, out.as_mut_ptr()), GlStatus::Ok);
        assert_eq!(out.to_vec(), dn.posterior_mean_x0(&x, 150).unwrap());
        assert_eq!(gl_denoiser_posterior_mean(fx.denoiser, x.as_ptr(), 3, 150, out.as_mut_ptr()), GlStatus::DimensionMismatch);
    }
}

#[test]
fn json_spec_is_accepted() {
    let spec = GmmSpec::preset("weighted-xor").unwrap();
    let json = serde_json::to_string(&spec).unwrap();
    let fx = Fixture::new(&json);
    unsafe { assert_eq!(gl_denoiser_dim(fx.denoiser), 2) };
}

#[test]
fn classifier_logits_match_core() {
    let fx = Fixture::new("weighted-xor");
    let mlp = Mlp::random(&[2, 8, 2], Activation::Tanh, 5).unwrap();
    let json = CString::new(mlp.to_json().unwrap()).unwrap();
    let x = [0.3, 0.9];
    let mut logits = [0.0; 2];
    unsafe {
        let mut c = ptr::null_mut();
        assert_eq!(gl_classifier_from_json(json.as_ptr(), false, &mut c), GlStatus::Ok);
        assert_eq!(gl_classifier_num_classes(c), 2);
        assert_eq!(gl_classifier_logits(c, x.as_ptr(), 2, logits.as_mut_ptr(), 2), GlStatus::Ok);
        assert_eq!(logits.to_vec(), mlp.forward(&x).unwrap());
        assert_eq!(gl_classifier_logits(c, x.as_ptr(), 2, logits.as_mut_ptr(), 3), GlStatus::DimensionMismatch);
        gl_classifier_free(c);

        let mut o = ptr::null_mut();
        assert_eq!(gl_classifier_oracle(fx.denoiser, &mut o), GlStatus::Ok);
        let oracle = ClassifierHandle::bayes_oracle(&GmmSpec::preset("weighted-xor").unwrap()).unwrap();
        assert_eq!(gl_classifier_logits(o, x.as_ptr(), 2, logits.as_mut_ptr(), 2), GlStatus::Ok);
        assert_eq!(logits.to_vec(), oracle.predict_logits(&x).unwrap());
        gl_classifier_free(o);

        let missing = CString::new("/nonexistent/model.json").unwrap();
        let mut m = ptr::null_mut();
        assert_eq!(gl_classifier_load(missing.as_ptr(), false, &mut m), GlStatus::Io);
        let garbage = CString::new("[1,2]").unwrap();
        assert_eq!(gl_classifier_from_json(garbage.as_ptr(), true, &mut m), GlStatus::Parse);
    }
}

#[test]
fn stabilizer_matches_core() {
    let kind = CString::new("adam").unwrap();
    let mut core = StabilizerState::new(2);
    let cfg = StabilizerConfig::adam();
    unsafe {
        let mut st = ptr::null_mut();
        assert_eq!(gl_stabilizer_new(kind.as_ptr(), 2, &mut st), GlStatus::Ok);
        for g in [[1.0, -2.0], [0.5, 0.25], [-3.0, 4.0]] {
            let mut out = [0.0; 2];
            assert_eq!(gl_stabilizer_step(st, g.as_ptr(), 2, out.as_mut_ptr()), GlStatus::Ok);
            assert_eq!(out.to_vec(), core.stabilize(&cfg, &g).unwrap());
        }
        gl_stabilizer_free(st);
    }
}

#[test]
fn sample_batch_matches_core() {
    let fx = Fixture::new("weighted-xor");
    let spec = GmmSpec::preset("weighted-xor").unwrap();
    let dn = AnalyticDenoiser::new(&spec, &Schedule::linear(400, 1e-4, 0.02).unwrap()).unwrap();
    let oracle = ClassifierHandle::bayes_oracle(&spec).unwrap();
    let cfg = GuidanceConfig {
        scale: 2.0,
        path: GuidancePath::X0Pred(JacobianMode::Full),
        stabilizer: StabilizerConfig::Ema { beta: 0.9 },
        ..GuidanceConfig::new(&oracle, 1)
    };
    let n = 16;
    let expected = sample_batch(&dn, &cfg, n, 42).unwrap();
    let path = CString::new("x0pred").unwrap();
    let stab = CString::new("ema:0.9").unwrap();
    let mut samples = vec![0.0; n * 2];
    let mut flags = vec![9u8; n];
    let mut nd = usize::MAX;
    unsafe {
        let mut c = ptr::null_mut();
        assert_eq!(gl_classifier_oracle(fx.denoiser, &mut c), GlStatus::Ok);
        let st = gl_sample_batch(fx.denoiser, c, 1, 2.0, path.as_ptr(), stab.as_ptr(), n, 42, samples.as_mut_ptr(), flags.as_mut_ptr(), &mut nd);
        assert_eq!(st, GlStatus::Ok, "{}", last_error());
        assert_eq!(nd, 0);
        assert!(flags.iter().all(|&f| f == 0));
        let rows: Vec<Vec<f64>> = samples.chunks(2).map(<[f64]>::to_vec).collect();
        assert_eq!(rows, expected.samples());

        let bad_path = CString::new("sideways").unwrap();
        let st = gl_sample_batch(fx.denoiser, c, 1, 2.0, bad_path.as_ptr(), stab.as_ptr(), n, 42, samples.as_mut_ptr(), flags.as_mut_ptr(), &mut nd);
        assert_eq!(st, GlStatus::InvalidArgument);
        let st = gl_sample_batch(fx.denoiser, c, 5, 2.0, path.as_ptr(), stab.as_ptr(), n, 42, samples.as_mut_ptr(), flags.as_mut_ptr(), &mut nd);
        assert_eq!(st, GlStatus::OutOfRange);

        let st = gl_sample_batch(fx.denoiser, c, 1, 1e308, path.as_ptr(), stab.as_ptr(), 4, 1, samples.as_mut_ptr(), flags.as_mut_ptr(), &mut nd);
        assert_eq!(st, GlStatus::Diverged);
        assert_eq!(nd, 4);
        assert!(flags[..4].iter().all(|&f| f == 1));
        assert!(samples[..8].iter().all(|v| v.is_nan()));
        gl_classifier_free(c);
    }
}

#[test]
fn frechet_matches_core() {
    let a = [0.0, 0.0, 1.0, 0.5, 2.0, -1.0, 0.3, 0.7];
    let b = [1.0, 1.0, 2.0, 0.0, 0.5, 0.5, -1.0, 2.0, 0.0, 1.5];
    let rows = |p: &[f64]| p.chunks(2).map(<[f64]>::to_vec).collect::<Vec<_>>();
    let expected = eval::frechet_distance(&rows(&a), &rows(&b)).unwrap();
    let mut fd = f64::NAN;
    unsafe {
        assert_eq!(gl_frechet_distance(a.as_ptr(), 4, b.as_ptr(), 5, 2, &mut fd), GlStatus::Ok);
        assert_eq!(fd, expected);
        assert_eq!(gl_frechet_distance(a.as_ptr(), 4, b.as_ptr(), 5, 0, &mut fd), GlStatus::InvalidArgument);
        assert_eq!(gl_frechet_distance(a.as_ptr(), 1, b.as_ptr(), 5, 2, &mut fd), GlStatus::InvalidArgument);
    }
}

#[test]
fn last_error_is_thread_local() {
    let mut s = ptr::null_mut();
    unsafe { assert_ne!(gl_schedule_linear(0, 1e-4, 0.02, false, &mut s), GlStatus::Ok) };
    let here = last_error();
    assert!(!here.is_empty());
    let there = std::thread::spawn(last_error).join().unwrap();
    assert!(there.is_empty());
    assert_eq!(last_error(), here);
}
