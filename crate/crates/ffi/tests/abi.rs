use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use latent_cluster::cluster::{kmeans_fit, KMeansConfig};
use latent_cluster::eval::{ari, MetricsReport, NmiVariant, ReportOptions};
use latent_cluster::model::{save_checkpoint, Autoencoder, Checkpoint, TrainingPhase, PARAMETER_COUNT};
use latent_cluster::Tensor;
use latent_cluster_ffi::*;

fn last_error() -> String {
    let p = lc_last_error_message();
    assert!(!p.is_null(), "a failed call must leave a message");
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn write_checkpoint(dir: &Path, seed: u64) -> (CString, Autoencoder<f32>) {
    let model = Autoencoder::new(seed);
    let ckpt = Checkpoint {
        model: model.clone(),
        phase: TrainingPhase::Reconstruction,
        epoch: 1,
        optimizer: None,
    };
    let path = dir.join("m.ckpt");
    save_checkpoint(&ckpt, &path).unwrap();
    (CString::new(path.to_str().unwrap()).unwrap(), model)
}

fn images(n: usize) -> Vec<f32> {
    (0..n * 784).map(|i| ((i * 37) % 256) as f32 / 255.0).collect()
}

fn blobs() -> (Vec<f64>, Vec<u32>) {
    let centres = [[0.0, 0.0], [10.0, 0.0], [0.0, 10.0]];
    let mut x = Vec::new();
    let mut truth = Vec::new();
    for (c, centre) in centres.iter().enumerate() {
        for i in 0..20 {
            let t = i as f64;
            x.push(centre[0] + (t * 0.37).sin());
            x.push(centre[1] + (t * 0.91).cos());
            truth.push(c as u32);
        }
    }
    (x, truth)
}

#[test]
fn model_round_trip_matches_the_library() {
    let dir = tempfile::tempdir().unwrap();
    let (path, model) = write_checkpoint(dir.path(), 3);
    let mut handle = ptr::null_mut();
    assert_eq!(unsafe { lc_model_load(path.as_ptr(), 64, &mut handle) }, LcStatus::Ok);
    assert!(!handle.is_null());
    assert_eq!(unsafe { lc_model_parameter_count(handle) }, PARAMETER_COUNT);
    assert_eq!(unsafe { lc_model_latent_dim(handle) }, 64);

    let n = 5;
    let px = images(n);
    let mut out = vec![0f32; n * 64];
    let status = unsafe { lc_model_encode(handle, px.as_ptr(), n, out.as_mut_ptr(), out.len()) };
    assert_eq!(status, LcStatus::Ok);
    let expected = model.encode(&Tensor::new(&[n, 1, 28, 28], px).unwrap()).unwrap();
    assert_eq!(out, expected.data());
    for row in out.chunks(64) {
        let norm: f32 = row.iter().map(|v| v * v).sum::<f32>().sqrt();
        assert!((norm - 1.0).abs() < 1e-5);
    }
    unsafe { lc_model_free(handle) };
}

#[test]
fn model_errors_are_reported() {
    let mut handle = ptr::null_mut();
    let missing = CString::new("/nonexistent/model.ckpt").unwrap();
    assert_eq!(unsafe { lc_model_load(missing.as_ptr(), 64, &mut handle) }, LcStatus::Io);
    assert!(handle.is_null());
    assert!(last_error().contains("nonexistent"));

    assert_eq!(unsafe { lc_model_load(ptr::null(), 64, &mut handle) }, LcStatus::NullPointer);

    let dir = tempfile::tempdir().unwrap();
    let garbage = dir.path().join("bad.ckpt");
    std::fs::write(&garbage, b"not a checkpoint").unwrap();
    let garbage = CString::new(garbage.to_str().unwrap()).unwrap();
    assert_eq!(unsafe { lc_model_load(garbage.as_ptr(), 64, &mut handle) }, LcStatus::Checkpoint);

    let (path, _) = write_checkpoint(dir.path(), 0);
    assert_eq!(unsafe { lc_model_load(path.as_ptr(), 64, &mut handle) }, LcStatus::Ok);
    let px = images(2);
    let mut out = vec![0f32; 64];
    let status = unsafe { lc_model_encode(handle, px.as_ptr(), 2, out.as_mut_ptr(), out.len()) };
    assert_eq!(status, LcStatus::InvalidArgument);
    assert!(last_error().contains("expected 128"));
    let status = unsafe { lc_model_encode(ptr::null(), px.as_ptr(), 2, out.as_mut_ptr(), 128) };
    assert_eq!(status, LcStatus::NullPointer);
    unsafe { lc_model_free(handle) };
    unsafe { lc_model_free(ptr::null_mut()) };
    assert_eq!(unsafe { lc_model_parameter_count(ptr::null()) }, 0);
}

#[test]
fn kmeans_and_metrics_match_the_library() {
    let (x, truth) = blobs();
    let n = truth.len();
    let mut assign = vec![0u32; n];
    let mut inertia = 0.0;
    let status = unsafe { lc_kmeans(x.as_ptr(), n, 2, 3, 7, 300, 1e-4, assign.as_mut_ptr(), &mut inertia) };
    assert_eq!(status, LcStatus::Ok);

    let xt = Tensor::new(&[n, 2], x.clone()).unwrap();
    let fit = kmeans_fit(&xt, &KMeansConfig { k: 3, seed: 7, max_iter: 300, tol: 1e-4 }).unwrap();
    assert_eq!(assign.iter().map(|&a| a as usize).collect::<Vec<_>>(), fit.assignments);
    assert_eq!(inertia, fit.inertia);

    let mut m = LcMetrics::default();
    let status = unsafe { lc_metrics(x.as_ptr(), n, 2, assign.as_ptr(), truth.as_ptr(), 3, false, &mut m) };
    assert_eq!(status, LcStatus::Ok);
    let t: Vec<usize> = truth.iter().map(|&v| v as usize).collect();
    let opts = ReportOptions { k: 3, nmi_variant: NmiVariant::Arithmetic, silhouette_sample: None, seed: 0 };
    let r = MetricsReport::compute(&xt, &fit.assignments, &t, &opts).unwrap();
    assert_eq!(
        (m.silhouette, m.davies_bouldin, m.calinski_harabasz, m.nmi, m.ari, m.aligned_accuracy),
        (r.silhouette, r.davies_bouldin, r.calinski_harabasz, r.nmi, r.ari, r.aligned_accuracy)
    );
    // Well-separated blobs are recovered exactly.
    assert_eq!((m.ari, m.aligned_accuracy), (1.0, 1.0));

    let mut v = 0.0;
    assert_eq!(unsafe { lc_ari(truth.as_ptr(), assign.as_ptr(), n, &mut v) }, LcStatus::Ok);
    assert_eq!(v, ari(&t, &fit.assignments).unwrap());
}

#[test]
fn clustering_errors_are_reported() {
    let x = [0.0f64, 1.0, 2.0];
    let mut assign = [0u32; 3];
    let status = unsafe { lc_kmeans(x.as_ptr(), 3, 1, 5, 0, 10, 1e-4, assign.as_mut_ptr(), ptr::null_mut()) };
    assert_ne!(status, LcStatus::Ok);
    assert!(!last_error().is_empty());

    let a = [0u32, 1];
    let mut v = 0.0;
    assert_eq!(unsafe { lc_ari(a.as_ptr(), ptr::null(), 2, &mut v) }, LcStatus::NullPointer);
    assert_eq!(unsafe { lc_ari(a.as_ptr(), a.as_ptr(), 2, ptr::null_mut()) }, LcStatus::NullPointer);

    let mut m = LcMetrics::default();
    let status = unsafe { lc_metrics(ptr::null(), 2, 1, a.as_ptr(), a.as_ptr(), 2, false, &mut m) };
    assert_eq!(status, LcStatus::NullPointer);
}

#[test]
fn error_message_is_per_thread() {
    let mut v = 0.0;
    let a = [0u32];
    assert_eq!(unsafe { lc_ari(a.as_ptr(), ptr::null(), 1, &mut v) }, LcStatus::NullPointer);
    std::thread::spawn(|| assert!(lc_last_error_message().is_null())).join().unwrap();
    assert!(last_error().contains("null"));
}

#[test]
fn header_declares_the_exported_api_and_compiles_as_c() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/latent_cluster.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for symbol in [
        "lc_last_error_message",
        "lc_version",
        "lc_model_load",
        "lc_model_free",
        "lc_model_latent_dim",
        "lc_model_parameter_count",
        "lc_model_encode",
        "lc_kmeans",
        "lc_metrics",
        "lc_ari",
        "LC_STATUS_INTERNAL = 8",
        "typedef struct LcModel LcModel",
    ] {
        assert!(text.contains(symbol), "header lacks {symbol}");
    }

    let Ok(cc) = Command::new("cc").arg("--version").output() else {
        eprintln!("no C compiler; skipping header compile check");
        return;
    };
    assert!(cc.status.success());
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(
        &src,
        "#include \"latent_cluster.h\"\n\
         int main(void) {\n\
           LcModel *m = NULL;\n\
           LcStatus s = lc_model_load(\"x\", 64, &m);\n\
           LcMetrics r; (void)r;\n\
           uint32_t a[1] = {0}; double v;\n\
           s = lc_ari(a, a, 1, &v);\n\
           lc_model_free(m);\n\
           return s == LC_STATUS_OK ? 0 : 1;\n\
         }\n",
    )
    .unwrap();
    let out = Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(header.parent().unwrap())
        .arg(&src)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
