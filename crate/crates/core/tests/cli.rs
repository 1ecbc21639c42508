use std::fs;
use std::path::PathBuf;
use std::process::Command as Proc;

use borelq::algebra::{c, CMat, C64};
use borelq::cli::{
    format_complex, matrix_from_text, matrix_to_text, parse_complex, run, Command, Relation, RunConfig, KEYS,
};
use borelq::Error;
use proptest::prelude::*;

fn scratch(name: &str) -> PathBuf {
    let d = std::env::temp_dir().join(format!("borelq-cli-{}-{name}", std::process::id()));
    let _ = fs::remove_dir_all(&d);
    fs::create_dir_all(&d).unwrap();
    d
}

fn finite() -> impl Strategy<Value = f64> {
    prop_oneof![-1e3..1e3f64, -1.0..1.0f64, Just(0.0), Just(-0.0), Just(1e-300), Just(-2.5e17)]
}

#[test]
fn empty_config_gives_defaults() {
    assert_eq!(RunConfig::parse("").unwrap(), RunConfig::default());
    assert_eq!(RunConfig::parse("# comment only\n\n").unwrap(), RunConfig::default());
}

#[test]
fn default_render_round_trips() {
    let text = RunConfig::default().render();
    let again = RunConfig::parse(&text).unwrap().render();
    assert_eq!(text, again);
    // `grid_points` is write-only: it expands into `lambda_grid`.
    assert!(!text.contains("grid_points"));
    assert_eq!(text.lines().count(), KEYS.len() - 1);
}

#[test]
fn unknown_and_duplicate_keys_are_rejected_with_line() {
    match RunConfig::parse("sites = 2\n\nbogus = 1\n") {
        Err(Error::Config { line, msg }) => {
            assert_eq!(line, 3);
            assert!(msg.contains("bogus"));
        }
        other => panic!("{other:?}"),
    }
    assert!(matches!(RunConfig::parse("sites = 2\nsites = 3\n"), Err(Error::Config { line: 2, .. })));
    assert!(matches!(RunConfig::parse("sites 2\n"), Err(Error::Config { line: 1, .. })));
    assert!(matches!(RunConfig::parse("sites = two\n"), Err(Error::Config { line: 1, .. })));
}

#[test]
fn overrides_apply_after_file() {
    let mut cfg = RunConfig::parse("sites = 2\n").unwrap();
    cfg.apply_override("sites=3").unwrap();
    cfg.apply_override("q=0.7-0.1i").unwrap();
    assert_eq!(cfg.params.sites, 3);
    assert_eq!(cfg.params.q, c(0.7, -0.1));
    assert!(cfg.apply_override("nokey").is_err());
    assert!(cfg.apply_override("nope=1").is_err());
}

#[test]
fn relation_plan_follows_config() {
    let cfg = RunConfig::parse("relations = tq\n").unwrap();
    assert_eq!(cfg.plan(), vec![Relation::Tq]);
    let cfg = RunConfig::parse("relations = fusion,commutativity\n").unwrap();
    assert_eq!(cfg.plan(), vec![Relation::Fusion, Relation::Commutativity]);
    assert!(RunConfig::parse("relations = tq,bogus\n").is_err());
}

#[test]
fn unit_modulus_q_rejected_for_infinite_traces() {
    let cfg = RunConfig::parse("q = 0.955336489125606+0.29552020666133955i\nrelations = factorization\n").unwrap();
    assert!(cfg.validate(Command::Verify).is_err());
    let fin = RunConfig::parse("q = 0.955336489125606+0.29552020666133955i\nrelations = fusion\n").unwrap();
    assert!(fin.validate(Command::Verify).is_ok());
    assert!(run(Command::Verify, &cfg).is_err());
}

#[test]
fn complex_parsing_cases() {
    let cases = [
        ("1.5", c(1.5, 0.0)),
        ("-2", c(-2.0, 0.0)),
        ("0.8+0.3i", c(0.8, 0.3)),
        ("0.8-0.3i", c(0.8, -0.3)),
        ("-1e-3+2.5E+2i", c(-1e-3, 250.0)),
        ("1e-6-1e-7i", c(1e-6, -1e-7)),
        ("i", c(0.0, 1.0)),
        ("-i", c(0.0, -1.0)),
        ("2.5i", c(0.0, 2.5)),
        ("1+i", c(1.0, 1.0)),
        (" 3-i ", c(3.0, -1.0)),
    ];
    for (s, want) in cases {
        assert_eq!(parse_complex(s), Some(want), "{s}");
    }
    for bad in ["", "abc", "1+2", "1+2j", "1++2i"] {
        assert_eq!(parse_complex(bad), None, "{bad}");
    }
    assert_eq!(format_complex(c(0.5, -0.0)), "0.5-0.0i");
}

#[test]
fn matrix_text_format() {
    let m = CMat::from_row_slice(2, 3, &[c(1.0, -2.0), c(0.1, 0.2), c(1e-300, 3.5e200), c(-0.0, 0.0), c(1.0 / 3.0, 2.0 / 7.0), c(f64::MAX, f64::MIN_POSITIVE)]);
    let t = matrix_to_text(&m);
    let mut lines = t.lines();
    assert_eq!(lines.next(), Some("2 3"));
    let first = lines.next().unwrap();
    assert_eq!(first, "1.0000000000000000e0 -2.0000000000000000e0");
    assert_eq!(t.lines().count(), 7);
    assert_eq!(matrix_from_text(&t).unwrap(), m);
    assert!(matrix_from_text("2 2\n1 0\n").is_err());
    assert!(matrix_from_text("2\n").is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn config_round_trip(
        qr in 0.1..0.99f64, qt in -3.0..3.0f64, phi in finite(), sites in 1usize..9,
        tol in 1e-14..1e-2f64, grid in prop::collection::vec((finite(), finite()), 1..5),
        js in prop::collection::vec(-4.0..4.0f64, 0..4), seed in any::<u64>(), export in any::<bool>(),
    ) {
        let mut cfg = RunConfig::default();
        cfg.params.q = C64::from_polar(qr, qt);
        cfg.params.phi = phi;
        cfg.params.sites = sites;
        cfg.params.tol_rel = tol;
        cfg.params.lambda_grid = grid.iter().map(|&(a, b)| c(a, b)).collect();
        cfg.j_list = js;
        cfg.seed = seed;
        cfg.export_matrices = export;
        let text = cfg.render();
        let back = RunConfig::parse(&text).unwrap();
        prop_assert_eq!(back.render(), text);
        prop_assert_eq!(back, cfg);
    }

    #[test]
    fn matrix_text_round_trip(v in prop::collection::vec((finite(), finite()), 1..13)) {
        let n = v.len();
        let m = CMat::from_iterator(1, n, v.iter().map(|&(a, b)| c(a, b)));
        let back = matrix_from_text(&matrix_to_text(&m)).unwrap();
        for (x, y) in back.iter().zip(m.iter()) {
            prop_assert_eq!(x.re.to_bits(), y.re.to_bits());
            prop_assert_eq!(x.im.to_bits(), y.im.to_bits());
        }
    }
}

fn bin() -> Proc {
    Proc::new(env!("CARGO_BIN_EXE_borelq"))
}

#[test]
fn exit_status_reflects_verdicts() {
    let d = scratch("exit");
    let ok = d.join("ok.cfg");
    fs::write(&ok, "sites = 2\nrelations = commutativity,tq,fusion\n").unwrap();
    let st = bin().args(["verify", "--config"]).arg(&ok).arg("--out").arg(d.join("o1")).status().unwrap();
    assert_eq!(st.code(), Some(0));

    // The representation-level limit is reported as a failure at this q.
    let st = bin().args(["limits", "--config"]).arg(&ok).arg("--out").arg(d.join("o2")).status().unwrap();
    assert_eq!(st.code(), Some(1));

    let bad = d.join("bad.cfg");
    fs::write(&bad, "sites = 2\nunknown_key = 1\n").unwrap();
    let out = bin().args(["verify", "--config"]).arg(&bad).arg("--out").arg(d.join("o3")).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));

    let st = bin()
        .args(["verify", "--config"])
        .arg(&ok)
        .arg("--out")
        .arg(d.join("o4"))
        .args(["--override", "tol_rel=1e-30", "--override", "relations=tq"])
        .status()
        .unwrap();
    // An unreachable tolerance turns the verdict into a failure.
    assert_eq!(st.code(), Some(1));
}

#[test]
fn report_embeds_config_and_names_files() {
    let d = scratch("report");
    let cfg = d.join("run.cfg");
    let text = "sites = 2\nrelations = tq\n";
    fs::write(&cfg, text).unwrap();
    let out = d.join("out");
    let st = bin()
        .args(["verify", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .args(["--override", "phi=0.3"])
        .status()
        .unwrap();
    assert_eq!(st.code(), Some(0));
    let names: Vec<String> = fs::read_dir(&out).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    let report = names.iter().find(|n| n.ends_with(".json")).unwrap();
    assert!(report.starts_with("verify_L2_q") && report.contains("_phi0.3_N32"), "{report}");
    assert!(names.iter().any(|n| n.ends_with(".csv") && n.contains("tq")), "{names:?}");
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join(report)).unwrap()).unwrap();
    assert_eq!(v["config_text"], text);
    assert_eq!(v["overrides"][0], "phi=0.3");
    let canonical = v["config"].as_str().unwrap();
    let parsed = RunConfig::parse(canonical).unwrap();
    assert_eq!(parsed.params.phi, 0.3);
    assert_eq!(parsed.render(), canonical);
    assert_eq!(v["verdict"], "pass");
}

#[test]
fn spectrum_csv_columns_and_matrix_export() {
    let d = scratch("spectrum");
    let cfg = d.join("run.cfg");
    fs::write(&cfg, "sites = 2\ngrid_points = 2\nexport_matrices = true\n").unwrap();
    let out = d.join("out");
    let st = bin().args(["spectrum", "--config"]).arg(&cfg).arg("--out").arg(&out).status().unwrap();
    assert_eq!(st.code(), Some(0));
    let mut csvs = 0;
    for e in fs::read_dir(&out).unwrap() {
        let p = e.unwrap().path();
        let name = p.file_name().unwrap().to_str().unwrap().to_string();
        if name.ends_with(".csv") {
            csvs += 1;
            let body = fs::read_to_string(&p).unwrap();
            assert_eq!(body.lines().next(), Some("sector,index,Re,Im"));
            assert_eq!(body.lines().count(), 5);
        } else if name.starts_with("matrix_") {
            let m = matrix_from_text(&fs::read_to_string(&p).unwrap()).unwrap();
            assert_eq!(m.shape(), (4, 4));
        }
    }
    assert_eq!(csvs, 6);
}
