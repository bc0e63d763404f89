use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use vanet_mac::channel::parse_trace;
use vanet_mac::config::parse_config;
use vanet_mac::sweep::CSV_HEADER;

fn vanet_sim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vanet-sim"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn printed_config_parses_back() {
    let out = vanet_sim(&["--print-config", "--nodes", "7", "--protocol", "edca"]);
    assert!(out.status.success());
    let cfg = parse_config(&String::from_utf8(out.stdout).unwrap()).unwrap();
    assert_eq!(cfg.node_count, 7);
    assert_eq!(cfg.protocol.name(), "edca");
}

#[test]
fn single_cell_writes_results() {
    let dir = tempfile::tempdir().unwrap();
    let out = vanet_sim(&[
        "--protocol", "frog", "--nodes", "3", "--frag-size", "16", "--duration-us", "2000000",
        "--runs", "2", "--out", path(dir.path()),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("results.csv")).unwrap();
    let lines: Vec<_> = csv.lines().collect();
    assert_eq!(lines.len(), 3);
    assert_eq!(lines[0], CSV_HEADER);
    assert!(lines[1].starts_with("frog,3,16,urgent,"));
    assert!(lines[2].starts_with("frog,3,16,normal,"));
    for name in ["delay_f16.dat", "throughput_f16.dat", "conservation.csv"] {
        assert!(dir.path().join(name).exists(), "{name}");
    }
}

#[test]
fn edca_plots_have_no_fragment_suffix() {
    let dir = tempfile::tempdir().unwrap();
    let out = vanet_sim(&[
        "--protocol", "edca", "--nodes", "2", "--duration-us", "1000000", "--runs", "1",
        "--out", path(dir.path()),
    ]);
    assert!(out.status.success());
    assert!(dir.path().join("delay.dat").exists());
    assert!(dir.path().join("throughput.dat").exists());
    let csv = fs::read_to_string(dir.path().join("results.csv")).unwrap();
    // a single replication has no interval
    assert!(csv.lines().nth(1).unwrap().starts_with("edca,2,,urgent,"));
    assert!(csv.lines().nth(2).unwrap().contains(",NA,"));
}

#[test]
fn bad_config_reports_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("bad.cfg");
    fs::write(&file, "# scenario\nnode_count = 4\nslot_time_us = fast\n").unwrap();
    let out = vanet_sim(&["--config", path(&file), "--print-config"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("line 3"), "{err}");
}

#[test]
fn out_of_range_flag_is_rejected() {
    let out = vanet_sim(&["--frag-size", "1", "--print-config"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8(out.stderr).unwrap().contains("--frag-size"));
    let out = vanet_sim(&["--nodes", "12", "--print-config"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn traces_are_readable() {
    let dir = tempfile::tempdir().unwrap();
    let traces = dir.path().join("traces");
    let out = vanet_sim(&[
        "--protocol", "frog", "--nodes", "2", "--frag-size", "2", "--duration-us", "500000",
        "--runs", "2", "--out", path(dir.path()), "--trace", path(&traces),
    ]);
    assert!(out.status.success());
    for r in 0..2 {
        let text = fs::read_to_string(traces.join(format!("trace_frog_n2_f2_r{r}.tsv"))).unwrap();
        let entries = parse_trace(&text).unwrap();
        assert!(!entries.is_empty());
        assert!(entries.windows(2).all(|w| w[0].start <= w[1].start));
    }
}

#[test]
fn failed_cell_exits_one_and_others_are_written() {
    let dir = tempfile::tempdir().unwrap();
    let traces = dir.path().join("traces");
    // a directory where a trace file should go makes that cell fail
    fs::create_dir_all(traces.join("trace_frog_n2_f16_r0.tsv")).unwrap();
    let out = vanet_sim(&[
        "--sweep", "--nodes", "2", "--frag-size", "16", "--duration-us", "500000", "--runs", "2",
        "--out", path(dir.path()), "--trace", path(&traces),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("frog nodes=2 F=16"), "{err}");
    let csv = fs::read_to_string(dir.path().join("results.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    assert!(csv.lines().skip(1).all(|l| l.starts_with("edca,2,,")));
}

#[test]
fn identical_invocations_write_identical_files() {
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        let out = vanet_sim(&[
            "--sweep", "--nodes", "4", "--duration-us", "5000000", "--seed", "11",
            "--out", path(d.path()),
        ]);
        assert!(out.status.success());
    }
    for name in ["results.csv", "conservation.csv", "delay_f2.dat", "throughput_f16.dat"] {
        let a = fs::read(dirs[0].path().join(name)).unwrap();
        assert!(!a.is_empty());
        assert_eq!(a, fs::read(dirs[1].path().join(name)).unwrap(), "{name}");
    }
}
