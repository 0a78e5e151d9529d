use std::ffi::{c_char, CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use leafnet::data::{generate_synthetic, write_image_folder, SyntheticSpec};
use leafnet::model::{build_exp4_proposed, Model};
use leafnet::train::{predict, save_checkpoint, Checkpoint};
use leafnet_ffi::*;

fn fixture(dir: &Path) -> (PathBuf, Checkpoint) {
    let spec = build_exp4_proposed(3, 64).unwrap();
    let mut params = Model::new(spec.clone()).unwrap().init_params(4);
    // Non-zero classifier weights so predictions depend on the input.
    let mut rng = leafnet::Prng::new(1);
    for (_, p) in params.iter_mut() {
        for v in p.value.data_mut() {
            if *v == 0.0 {
                *v = (rng.gaussian() * 0.05) as f32;
            }
        }
    }
    let ck = Checkpoint {
        spec,
        class_names: vec!["blight".into(), "healthy".into(), "rust".into()],
        config: None,
        epoch: 0,
        params,
    };
    let path = dir.join("model.lfnt");
    save_checkpoint(&path, &ck).unwrap();
    (path, ck)
}

fn cstr(p: &Path) -> CString {
    CString::new(p.to_str().unwrap()).unwrap()
}

fn last_error() -> String {
    let n = unsafe { leafnet_last_error_message(ptr::null_mut(), 0) };
    let mut buf = vec![0 as c_char; n];
    unsafe { leafnet_last_error_message(buf.as_mut_ptr(), n) };
    unsafe { CStr::from_ptr(buf.as_ptr()) }.to_string_lossy().into_owned()
}

fn load(path: &Path) -> *mut LeafnetModel {
    let mut m = ptr::null_mut();
    let status = unsafe { leafnet_model_load(cstr(path).as_ptr(), &mut m) };
    assert_eq!(status, LeafnetStatus::Ok, "{}", last_error());
    m
}

#[test]
fn load_inspect_predict() {
    let dir = tempfile::tempdir().unwrap();
    let (path, ck) = fixture(dir.path());
    let m = load(&path);
    unsafe {
        let mut k = 0;
        assert_eq!(leafnet_model_num_classes(m, &mut k), LeafnetStatus::Ok);
        assert_eq!(k, 3);
        let mut name = ptr::null();
        assert_eq!(leafnet_model_class_name(m, 2, &mut name), LeafnetStatus::Ok);
        assert_eq!(CStr::from_ptr(name).to_str().unwrap(), "rust");
        assert_eq!(leafnet_model_class_name(m, 3, &mut name), LeafnetStatus::InvalidArgument);
        assert!(last_error().contains("out of range"));

        let (mut c, mut h, mut w) = (0, 0, 0);
        leafnet_model_input_shape(m, &mut c, &mut h, &mut w);
        assert_eq!((c, h, w), (3, 64, 64));
        let (mut total, mut trainable) = (0, 0);
        leafnet_model_count_parameters(m, &mut total, &mut trainable);
        assert_eq!((total, trainable), Model::new(ck.spec.clone()).unwrap().count_parameters());

        let ds = generate_synthetic(&SyntheticSpec::new(3, 1, 40, 2)).unwrap();
        write_image_folder(&ds, dir.path()).unwrap();
        let img_path = dir.path().join(&ds.samples[1].path);
        let mut probs = [0f32; 3];
        let mut idx = usize::MAX;
        let status = leafnet_model_predict_file(m, cstr(&img_path).as_ptr(), probs.as_mut_ptr(), 3, &mut idx);
        assert_eq!(status, LeafnetStatus::Ok, "{}", last_error());
        let expected = predict(&Model::new(ck.spec.clone()).unwrap(), &ck.params, &ck.class_names, &img_path).unwrap();
        assert_eq!(probs.to_vec(), expected.probabilities);
        assert_eq!(idx, expected.class_index);
        assert!((probs.iter().sum::<f32>() - 1.0).abs() < 1e-6);

        let img = ds.samples[1].load().unwrap();
        let mut probs_rgb = [0f32; 3];
        let status = leafnet_model_predict_rgb(m, img.as_raw().as_ptr(), 40, 40, probs_rgb.as_mut_ptr(), 3, ptr::null_mut());
        assert_eq!(status, LeafnetStatus::Ok);
        assert_eq!(probs_rgb, probs);

        let status = leafnet_model_predict_file(m, cstr(&img_path).as_ptr(), probs.as_mut_ptr(), 2, ptr::null_mut());
        assert_eq!(status, LeafnetStatus::BufferTooSmall);

        let copy = dir.path().join("copy.lfnt");
        assert_eq!(leafnet_model_save(m, cstr(&copy).as_ptr()), LeafnetStatus::Ok);
        assert_eq!(std::fs::read(&copy).unwrap(), std::fs::read(&path).unwrap());
        leafnet_model_free(m);
    }
}

#[test]
fn errors_are_codes_not_crashes() {
    let dir = tempfile::tempdir().unwrap();
    let (path, _) = fixture(dir.path());
    unsafe {
        let mut m = ptr::null_mut();
        assert_eq!(leafnet_model_load(ptr::null(), &mut m), LeafnetStatus::NullPointer);
        assert_eq!(leafnet_model_load(cstr(&path).as_ptr(), ptr::null_mut()), LeafnetStatus::NullPointer);
        let missing = dir.path().join("missing.lfnt");
        assert_eq!(leafnet_model_load(cstr(&missing).as_ptr(), &mut m), LeafnetStatus::Io);
        assert!(m.is_null());

        let bytes = std::fs::read(&path).unwrap();
        let cut = dir.path().join("cut.lfnt");
        std::fs::write(&cut, &bytes[..bytes.len() / 2]).unwrap();
        assert_eq!(leafnet_model_load(cstr(&cut).as_ptr(), &mut m), LeafnetStatus::Corrupt);
        assert!(last_error().contains("truncated"));

        let mut k = 0;
        assert_eq!(leafnet_model_num_classes(ptr::null(), &mut k), LeafnetStatus::NullPointer);
        leafnet_model_free(ptr::null_mut());

        let m = load(&path);
        let junk = dir.path().join("junk.png");
        std::fs::write(&junk, b"not an image").unwrap();
        let status = leafnet_model_predict_file(m, cstr(&junk).as_ptr(), ptr::null_mut(), 0, ptr::null_mut());
        assert_eq!(status, LeafnetStatus::Ingestion);
        leafnet_model_free(m);

        let mut small = [0 as c_char; 4];
        let needed = leafnet_last_error_message(small.as_mut_ptr(), small.len());
        assert!(needed > 4);
        assert_eq!(CStr::from_ptr(small.as_ptr()).to_bytes().len(), 3);
    }
}

#[test]
fn roc_auc_matches_pair_count() {
    let scores = [0.9, 0.8, 0.7, 0.6, 0.55, 0.4];
    let positive = [1u8, 0, 1, 1, 0, 0];
    let mut auc = 0.0;
    let status = unsafe { leafnet_roc_auc(scores.as_ptr(), positive.as_ptr(), 6, &mut auc) };
    assert_eq!(status, LeafnetStatus::Ok);
    // positives {0.9,0.7,0.6} vs negatives {0.8,0.55,0.4}: 7 of 9 pairs ordered
    assert!((auc - 7.0 / 9.0).abs() < 1e-12);
    let one = [1u8; 6];
    let status = unsafe { leafnet_roc_auc(scores.as_ptr(), one.as_ptr(), 6, &mut auc) };
    assert_eq!(status, LeafnetStatus::InvalidArgument);
}

fn header() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("include/leafnet.h")
}

#[test]
fn header_declares_every_export() {
    let text = std::fs::read_to_string(header()).unwrap();
    for name in [
        "leafnet_model_load",
        "leafnet_model_free",
        "leafnet_model_num_classes",
        "leafnet_model_class_name",
        "leafnet_model_input_shape",
        "leafnet_model_count_parameters",
        "leafnet_model_predict_file",
        "leafnet_model_predict_rgb",
        "leafnet_model_save",
        "leafnet_roc_auc",
        "leafnet_last_error_message",
        "typedef struct LeafnetModel LeafnetModel",
        "LEAFNET_STATUS_BUFFER_TOO_SMALL = 9",
    ] {
        assert!(text.contains(name), "{name} missing from header");
    }
}

fn cdylib_dir() -> Option<PathBuf> {
    // target/<profile>/deps/<test binary>
    let deps = std::env::current_exe().ok()?.parent()?.to_path_buf();
    let profile = deps.parent()?.to_path_buf();
    profile.join("libleafnet_ffi.so").is_file().then_some(profile)
}

#[test]
fn c_program_links_and_runs() {
    let Ok(cc) = which_cc() else {
        eprintln!("no C compiler found; skipping");
        return;
    };
    let dir = tempfile::tempdir().unwrap();
    let (path, _) = fixture(dir.path());
    let src = dir.path().join("main.c");
    std::fs::write(
        &src,
        r#"#include <stdio.h>
#include "leafnet.h"
int main(int argc, char **argv) {
    LeafnetModel *m = NULL;
    if (leafnet_model_load(argv[1], &m) != LEAFNET_STATUS_OK) return 1;
    size_t k = 0;
    leafnet_model_num_classes(m, &k);
    unsigned char px[8 * 8 * 3] = {0};
    float probs[16];
    size_t idx = 99;
    LeafnetStatus s = leafnet_model_predict_rgb(m, px, 8, 8, probs, 16, &idx);
    leafnet_model_free(m);
    printf("%zu %d %d\n", k, (int)s, idx < k);
    return s == LEAFNET_STATUS_OK ? 0 : 2;
}
"#,
    )
    .unwrap();
    let include = header().parent().unwrap().to_path_buf();
    let syntax = Command::new(&cc)
        .args(["-fsyntax-only", "-Wall", "-Werror", "-I"])
        .arg(&include)
        .arg(&src)
        .status()
        .unwrap();
    assert!(syntax.success(), "header does not compile as C");
    let Some(libdir) = cdylib_dir() else {
        eprintln!("cdylib not built next to the test binary; link step skipped");
        return;
    };
    let exe = dir.path().join("main");
    let built = Command::new(&cc)
        .arg("-I")
        .arg(&include)
        .arg(&src)
        .arg("-L")
        .arg(&libdir)
        .args(["-lleafnet_ffi", "-o"])
        .arg(&exe)
        .status()
        .unwrap();
    assert!(built.success());
    let out = Command::new(&exe)
        .arg(&path)
        .env("LD_LIBRARY_PATH", &libdir)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "3 0 1");
}

fn which_cc() -> Result<String, ()> {
    for cc in ["cc", "gcc", "clang"] {
        if Command::new(cc).arg("--version").output().is_ok_and(|o| o.status.success()) {
            return Ok(cc.to_string());
        }
    }
    Err(())
}
