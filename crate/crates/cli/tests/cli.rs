use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use cyclebnn::nn::checkpoint::save_checkpoint;
use cyclebnn::nn::{convnet_small, Network};

fn cyclebnn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cyclebnn")).args(args).output().expect("spawn cyclebnn")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, body).unwrap();
    path
}

fn small_config(dir: &Path, out: &str) -> PathBuf {
    let body = format!("epochs = 3\ncycles = 1\nsynth_n = 120\nsynth_test_n = 40\nseed = 4\nout_dir = \"{out}\"\n");
    write_config(dir, &format!("{out}.toml"), &body)
}

fn bits_column(csv: &str) -> Vec<u32> {
    csv.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect()
}

#[test]
fn schedule_anchored_sweeps_eight_cycles() {
    let o = cyclebnn(&["schedule", "600", "8", "2", "6"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert_eq!(text.lines().next(), Some("epoch,bits,lr"));
    let bits = bits_column(&text);
    assert_eq!(bits.len(), 600);
    assert_eq!(bits[0], 2);
    assert!(bits.iter().all(|b| (2..=6).contains(b)));
    assert_eq!(1 + bits.windows(2).filter(|w| w[1] < w[0]).count(), 8);
}

#[test]
fn schedule_literal_mode_is_offset() {
    let o = cyclebnn(&["schedule", "600", "8", "2", "6", "--mode", "literal"]);
    assert!(o.status.success());
    let bits = bits_column(&stdout(&o));
    assert!(bits.iter().all(|b| (0..=4).contains(b)));
    assert!(bits.contains(&0));
}

#[test]
fn schedule_single_epoch_gives_min_bits() {
    let o = cyclebnn(&["schedule", "1", "1", "3", "6"]);
    assert!(o.status.success());
    assert_eq!(bits_column(&stdout(&o)), vec![3]);
}

#[test]
fn schedule_rejects_bad_ranges() {
    assert_eq!(cyclebnn(&["schedule", "10", "2", "0", "6"]).status.code(), Some(2));
    assert_eq!(cyclebnn(&["schedule", "10", "11", "2", "6"]).status.code(), Some(2));
    assert_eq!(cyclebnn(&["schedule", "10", "2", "2", "6", "--mode", "cosine"]).status.code(), Some(2));
}

#[test]
fn train_rejects_invalid_configs() {
    let dir = tempfile::tempdir().unwrap();
    let zero = write_config(dir.path(), "zero.toml", "epochs = 4\nmin_bits = 0\nsynth_n = 20\nout_dir = \"o\"\n");
    let o = cyclebnn(&["train", zero.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));

    let typo = write_config(dir.path(), "typo.toml", "epochs = 4\nlearning_rate = 0.1\nsynth_n = 20\nout_dir = \"o\"\n");
    let o = cyclebnn(&["train", typo.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("learning_rate"), "{}", stderr(&o));

    let no_data = write_config(dir.path(), "nodata.toml", "epochs = 4\nout_dir = \"o\"\n");
    assert_eq!(cyclebnn(&["train", no_data.to_str().unwrap()]).status.code(), Some(2));
    assert!(!dir.path().join("o").exists());
}

#[test]
fn train_eval_pack_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "run_a");
    let o = cyclebnn(&["train", cfg.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = dir.path().join("run_a");
    let metrics = fs::read_to_string(out.join("metrics.csv")).unwrap();
    let mut lines = metrics.lines();
    assert_eq!(lines.next(), Some("epoch,bits,lr,loss,train_acc,test_acc,cum_training_macs"));
    let rows: Vec<Vec<String>> = lines.map(|l| l.split(',').map(String::from).collect()).collect();
    assert_eq!(rows.len(), 3);
    let macs: Vec<f64> = rows.iter().map(|r| r[6].parse().unwrap()).collect();
    assert!(macs.windows(2).all(|w| w[1] > w[0]));

    let report = fs::read_to_string(out.join("cost_report.csv")).unwrap();
    assert!(report.starts_with("metric,value\n"));
    assert!(report.contains("memory_ratio,0.25\n"), "{report}");
    assert!(out.join("cost_report.txt").exists());

    // Deterministic under a fixed config.
    let cfg_b = small_config(dir.path(), "run_b");
    assert!(cyclebnn(&["train", cfg_b.to_str().unwrap()]).status.success());
    assert_eq!(fs::read(out.join("metrics.csv")).unwrap(), fs::read(dir.path().join("run_b/metrics.csv")).unwrap());
    assert_eq!(fs::read(out.join("model.cbnn")).unwrap(), fs::read(dir.path().join("run_b/model.cbnn")).unwrap());

    let ckpt = out.join("model.cbnn");
    let o = cyclebnn(&["eval", ckpt.to_str().unwrap(), "--config", cfg.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let acc_line = stdout(&o).lines().find(|l| l.starts_with("accuracy: ")).unwrap().to_string();
    assert_eq!(acc_line["accuracy: ".len()..], rows[2][5]);

    let p1 = dir.path().join("a.cbnp");
    let p2 = dir.path().join("b.cbnp");
    assert!(cyclebnn(&["pack", ckpt.to_str().unwrap(), p1.to_str().unwrap()]).status.success());
    assert!(cyclebnn(&["pack", ckpt.to_str().unwrap(), p2.to_str().unwrap()]).status.success());
    let packed = fs::read(&p1).unwrap();
    assert_eq!(packed, fs::read(&p2).unwrap());
    assert_eq!(&packed[..4], b"CBNP");
    // The two binary convs hold 16·32·9 + 32·64·9 signs, stored at one bit each.
    let binary_bits = 16 * 32 * 9 + 32 * 64 * 9;
    assert!(packed.len() < fs::read(&ckpt).unwrap().len() / 4);
    assert!(packed.len() > binary_bits / 8);

    for args in [
        vec!["eval", ckpt.to_str().unwrap(), "--config", cfg.to_str().unwrap(), "--packed", p1.to_str().unwrap()],
        vec!["eval", ckpt.to_str().unwrap(), "--packed", "--config", cfg.to_str().unwrap()],
    ] {
        let o = cyclebnn(&args);
        assert!(o.status.success(), "{}", stderr(&o));
        assert!(stdout(&o).contains("paths-agree: true"));
    }
}

#[test]
fn corrupted_checkpoint_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.cbnn");
    let net = Network::new(&convnet_small([1, 8, 8], 2, false), &[1, 8, 8], 1, false).unwrap();
    save_checkpoint(&path, &net, false).unwrap();
    let mut bytes = fs::read(&path).unwrap();
    bytes[0] = b'X';
    fs::write(&path, &bytes).unwrap();
    let o = cyclebnn(&["pack", path.to_str().unwrap(), dir.path().join("x.cbnp").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("bad-checkpoint-magic"), "{}", stderr(&o));

    fs::write(&path, &bytes[..4]).unwrap();
    assert_eq!(cyclebnn(&["pack", path.to_str().unwrap(), "x"]).status.code(), Some(2));
}

#[test]
fn pack_of_constant_binary_weights_is_numerical_failure() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("flat.cbnn");
    let mut net = Network::new(&convnet_small([1, 8, 8], 2, false), &[1, 8, 8], 1, false).unwrap();
    for (name, t) in net.state_mut() {
        if name.contains("binary_conv") {
            t.data_mut().fill(0.25);
        }
    }
    save_checkpoint(&path, &net, false).unwrap();
    let o = cyclebnn(&["pack", path.to_str().unwrap(), dir.path().join("f.cbnp").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("zero-variance-weights"));
}

#[test]
fn qe_from_fits_file() {
    let dir = tempfile::tempdir().unwrap();
    let fits = dir.path().join("fits.csv");
    fs::write(&fits, "A,mu,sigma\n0.50,-0.11,0.38\n").unwrap();
    let o = cyclebnn(&["qe", "--fits", fits.to_str().unwrap(), "--bits", "1,8"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    let rows: Vec<&str> = text.lines().collect();
    assert_eq!(rows[0], "bits,a");
    let one: f64 = rows[1].strip_prefix("1,").unwrap().parse().unwrap();
    assert!(one.abs() < 1e-9);
    let eight: f64 = rows[2].strip_prefix("8,").unwrap().parse().unwrap();
    assert!((eight - 0.250).abs() < 0.03, "{eight}");

    let empty = dir.path().join("empty.csv");
    fs::write(&empty, "").unwrap();
    assert_eq!(cyclebnn(&["qe", "--fits", empty.to_str().unwrap()]).status.code(), Some(2));
    assert_eq!(cyclebnn(&["qe", "--fits", fits.to_str().unwrap(), "--bits", "0"]).status.code(), Some(2));
}

#[test]
fn qe_from_checkpoint_has_one_column_per_binary_layer() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.cbnn");
    let net = Network::new(&convnet_small([1, 8, 8], 2, false), &[1, 8, 8], 2, false).unwrap();
    save_checkpoint(&path, &net, false).unwrap();
    let o = cyclebnn(&["qe", "--checkpoint", path.to_str().unwrap(), "--bits", "2-3", "--steps", "20000"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert_eq!(text.lines().next(), Some("bits,3.binary_conv.weight,7.binary_conv.weight"));
    assert_eq!(text.lines().count(), 3);
}

#[test]
fn missing_subcommand_arguments_exit_two() {
    assert_eq!(cyclebnn(&["qe"]).status.code(), Some(2));
    assert_eq!(cyclebnn(&["eval"]).status.code(), Some(2));
    assert_eq!(cyclebnn(&["frobnicate"]).status.code(), Some(2));
}
