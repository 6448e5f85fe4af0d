use std::fs;

use nlpr::cli::mbi::read_mbi;
use nlpr::cli::run;

fn args(list: &[&str]) -> Vec<String> {
    std::iter::once("nlpr").chain(list.iter().copied()).map(String::from).collect()
}

#[test]
fn simulate_fuse_metrics_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = tmp.path().join("sim");
    let out = tmp.path().join("out");
    let cfg = tmp.path().join("run.cfg");
    fs::write(&cfg, "# small instance\nrows = 16\ncols = 16\nbands = 6\ncoarse_bands = 3\nmax_iters = 30\n").unwrap();
    let common = ["--config", cfg.to_str().unwrap(), "--deterministic", "--seed", "5"];

    let mut a = common.to_vec();
    a.extend(["simulate", "--output", sim.to_str().unwrap()]);
    assert_eq!(run(args(&a)), 0);
    for f in ["gt.mbi", "yl.mbi", "yh.mbi", "spec.cfg"] {
        assert!(sim.join(f).exists(), "{f}");
    }
    let gt = read_mbi(&sim.join("gt.mbi")).unwrap();
    assert_eq!((gt.grid().rows(), gt.grid().cols(), gt.bands()), (16, 16, 6));
    let yl = read_mbi(&sim.join("yl.mbi")).unwrap();
    assert_eq!((yl.grid().rows(), yl.bands()), (4, 6));

    let mut a = common.to_vec();
    a.extend(["--set", "lambda2=1e-3", "fuse", "--input", sim.to_str().unwrap(), "--output", out.to_str().unwrap()]);
    assert_eq!(run(args(&a)), 0);
    let z = read_mbi(&out.join("zhat.mbi")).unwrap();
    assert_eq!(z.grid(), gt.grid());
    let log = fs::read_to_string(out.join("log.csv")).unwrap();
    assert_eq!(log.lines().count(), 31);
    assert!(log.lines().skip(1).all(|l| l.ends_with(",0.000")));

    let csv = tmp.path().join("m.csv");
    let gt_path = sim.join("gt.mbi");
    let z_path = out.join("zhat.mbi");
    assert_eq!(
        run(args(&["metrics", gt_path.to_str().unwrap(), z_path.to_str().unwrap(), "--csv", csv.to_str().unwrap()])),
        0
    );
    // metrics computed by the fuse step and by the metrics command agree
    let a = fs::read_to_string(out.join("metrics.csv")).unwrap();
    let b = fs::read_to_string(&csv).unwrap();
    assert_eq!(a, b);
}

#[test]
fn ablation_writes_five_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let csv = tmp.path().join("ablation.csv");
    let code = run(args(&[
        "--set", "rows=16", "--set", "cols=16", "--set", "bands=4", "--set", "coarse_bands=2",
        "--set", "max_iters=10", "ablate", "--output", csv.to_str().unwrap(),
    ]));
    assert_eq!(code, 0);
    let text = fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "case,rmse,ergas,sam,uiqi,psnr,ssim");
    let cases: Vec<&str> = lines[1..].iter().map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(cases, ["C1", "C2", "C3", "C4", "C5"]);
}

#[test]
fn bench_report_lists_requested_sizes() {
    let tmp = tempfile::tempdir().unwrap();
    let csv = tmp.path().join("bench.csv");
    assert_eq!(
        run(args(&["bench", "--sizes", "8,12", "--bands", "2", "--cg-iters", "3", "--output", csv.to_str().unwrap()])),
        0
    );
    let text = fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().count(), 3);
}

#[test]
fn bad_inputs_exit_with_codes() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(run(args(&["--set", "factor=3", "simulate", "--output", tmp.path().to_str().unwrap()])), 1);
    let junk = tmp.path().join("junk.mbi");
    fs::write(&junk, b"not an mbi file").unwrap();
    assert_eq!(run(args(&["metrics", junk.to_str().unwrap(), junk.to_str().unwrap()])), 2);
}
