use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use pagevault_core::corpus::{
    write_pairtree, write_volume_zip, ChecksumType, PageRecord, Sequence, VolumeId, VolumeRecord,
    ZipMethod,
};

fn pagevault(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pagevault"))
        .args(args)
        .output()
        .unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn read_tree(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in fs::read_dir(dir).unwrap() {
            let path = e.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push((
                    path.strip_prefix(root).unwrap().display().to_string(),
                    fs::read(&path).unwrap(),
                ));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn synth_is_byte_identical_for_a_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b, c) = (
        tmp.path().join("a"),
        tmp.path().join("b"),
        tmp.path().join("c"),
    );
    for (dir, seed) in [(&a, "7"), (&b, "7"), (&c, "8")] {
        let o = pagevault(&["synth", "--n", "40", "--seed", seed, "--out", p(dir)]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let ta = read_tree(&a);
    assert_eq!(ta.iter().filter(|(n, _)| n.ends_with(".zip")).count(), 40);
    assert_eq!(ta, read_tree(&b));
    assert_ne!(ta, read_tree(&c));
}

#[test]
fn usage_errors_exit_two_and_help_exits_zero() {
    assert_eq!(pagevault(&["synth", "--bogus"]).status.code(), Some(2));
    assert_eq!(pagevault(&["stats"]).status.code(), Some(2));
    assert_eq!(pagevault(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(
        pagevault(&["simulate", "--preset", "nope"]).status.code(),
        Some(2)
    );
    assert_eq!(
        pagevault(&["bench", "--topology", "ring", "--sweep", "4,2"])
            .status
            .code(),
        Some(2)
    );
    let help = pagevault(&["--help"]);
    assert_eq!(help.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&help.stdout).contains("simulate"));

    let tmp = tempfile::tempdir().unwrap();
    let conf = tmp.path().join("x.conf");
    fs::write(&conf, "no_such_key = 1\n").unwrap();
    let o = pagevault(&["stats", "--input", p(tmp.path()), "--config", p(&conf)]);
    assert_eq!(o.status.code(), Some(2));
}

/// A one-page stored zip of `kib` KiB exactly.
fn volume_of_kib(i: usize, kib: u64) -> VolumeRecord {
    let text = "a".repeat((kib * 1024 - 122) as usize);
    let page = PageRecord::new(Sequence::new(1).unwrap(), text, ChecksumType::Md5);
    VolumeRecord::new(
        VolumeId::new(format!("fx.{i}")).unwrap(),
        vec![page],
        1,
        "eng",
    )
    .unwrap()
}

#[test]
fn stats_of_a_hand_computed_fixture() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path().join("volumes");
    for (i, kib) in [3, 10, 1, 4, 2].into_iter().enumerate() {
        let zip = write_volume_zip(&volume_of_kib(i, kib), ZipMethod::Stored).unwrap();
        assert_eq!(zip.len() as u64, kib * 1024);
        write_pairtree(&root, &VolumeId::new(format!("fx.{i}")).unwrap(), &zip).unwrap();
    }
    let o = pagevault(&["stats", "--input", p(&root)]);
    assert!(o.status.success());
    assert_eq!(
        String::from_utf8(o.stdout).unwrap(),
        "stat,kb\nmin,1.000\nq1,2.000\nmedian,3.000\nmean,4.000\nq3,4.000\nmax,10.000\n"
    );

    // a corrupt archive is reported after the others are summarized
    write_pairtree(&root, &VolumeId::new("fx.bad").unwrap(), b"not a zip").unwrap();
    let out = tmp.path().join("stats.csv");
    let o = pagevault(&["stats", "--input", p(&root), "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(3));
    assert!(fs::read_to_string(&out)
        .unwrap()
        .starts_with("stat,kb\nmin,1.000\n"));
    assert!(String::from_utf8_lossy(&o.stderr).contains("fx.bad"));

    let o = pagevault(&["stats", "--input", p(&tmp.path().join("missing"))]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn corpus_to_query_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let t = tmp.path();
    let run = |args: &[&str]| {
        let o = pagevault(args);
        assert!(
            o.status.success(),
            "{args:?}: {}",
            String::from_utf8_lossy(&o.stderr)
        );
        o
    };
    run(&[
        "synth",
        "--n",
        "30",
        "--seed",
        "3",
        "--out",
        p(&t.join("c")),
    ]);
    run(&[
        "ingest",
        "--input",
        p(&t.join("c/volumes")),
        "--out",
        p(&t.join("store")),
    ]);
    run(&[
        "rights-load",
        "--input",
        p(&t.join("c/rights.csv")),
        "--out",
        p(&t.join("rights")),
    ]);
    run(&[
        "index-load",
        "--input",
        p(&t.join("c/bib.csv")),
        "--out",
        p(&t.join("index.csv")),
    ]);

    let ids: Vec<String> = fs::read_to_string(t.join("c/rights.csv"))
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').next().unwrap().to_string())
        .collect();
    let mut workset = ids[..10].to_vec();
    workset.push("nowhere.1".into());
    let req = serde_json::json!({
        "selector": {"workset": workset},
        "content": {"pages": ["00000001"]},
        "user": {"jurisdiction": "US", "access_level": 0}
    });
    fs::write(t.join("req.json"), req.to_string()).unwrap();
    let o = run(&[
        "query",
        "--request",
        p(&t.join("req.json")),
        "--store",
        p(&t.join("store")),
        "--rights",
        p(&t.join("rights")),
        "--index",
        p(&t.join("index.csv")),
    ]);
    let lines: Vec<serde_json::Value> = String::from_utf8(o.stdout)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 11);
    assert!(String::from_utf8_lossy(&o.stderr).contains("rights_batches=1"));
    let last = lines.iter().find(|e| e["volume"] == "nowhere.1").unwrap();
    assert!(last["body"].get("content").is_none());

    fs::write(t.join("bad.json"), "{").unwrap();
    let o = pagevault(&[
        "query",
        "--request",
        p(&t.join("bad.json")),
        "--store",
        p(&t.join("store")),
        "--rights",
        p(&t.join("rights")),
        "--index",
        p(&t.join("index.csv")),
    ]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn simulate_and_bench_write_their_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("sim");
    let o = pagevault(&[
        "simulate",
        "--preset",
        "ring-repair-on",
        "--duration",
        "30",
        "--out",
        p(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let series = fs::read_to_string(out.join("series.csv")).unwrap();
    assert!(series.starts_with("t_seconds,qps,errors\n"));
    assert_eq!(series.lines().count(), 1 + 6);
    assert!(fs::read_to_string(out.join("events.csv"))
        .unwrap()
        .starts_with("t,type,node,detail"));
    let conf = fs::read_to_string(out.join("run.conf")).unwrap();
    assert!(conf.contains("schedule = 100:node=1,200:node=4"));

    let out = tmp.path().join("bench");
    let o = pagevault(&[
        "bench",
        "--topology",
        "sharded",
        "--sweep",
        "2,8,32",
        "--duration",
        "20",
        "--warmup",
        "5",
        "--out",
        p(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["points"].as_array().unwrap().len(), 3);
    assert_eq!(report["series_csv"], "series.csv");
    assert!(report["max_stable_qps"].as_f64().unwrap() > 0.0);
}
