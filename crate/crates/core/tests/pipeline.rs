use std::collections::BTreeSet;

use holorepair::constraints::{parse_dc_file, parse_md_file};
use holorepair::dataset::{read_cell_list, read_groundtruth, Dataset, LoadOptions};
use holorepair::extdict::ExtDict;
use holorepair::ground::Mode;
use holorepair::pipeline::{load_inputs, run, Inference, InputPaths, Inputs, Settings, Stage};
use holorepair::synthetic::{generate, inspection, SyntheticConfig};

fn inspection_inputs() -> Inputs {
    let f = inspection();
    let ds = Dataset::from_reader(f.data.as_bytes(), &LoadOptions::default()).unwrap();
    let mut inputs = Inputs::new(ds, parse_dc_file(f.dcs).unwrap());
    inputs.dicts.insert(ExtDict::from_reader("addr", f.dict.as_bytes()).unwrap()).unwrap();
    inputs.mds = parse_md_file(f.mds).unwrap();
    inputs.noisy_cells = read_cell_list(f.noisy_cells.as_bytes(), &inputs.dataset).unwrap();
    inputs.groundtruth = Some(read_groundtruth(f.groundtruth.as_bytes(), &inputs.dataset).unwrap());
    inputs
}

fn synthetic_inputs(tuples: usize, seed: u64) -> Inputs {
    let s = generate(&SyntheticConfig {
        tuples,
        seed,
        ..Default::default()
    });
    let opts = LoadOptions {
        tid_column: Some("tid".into()),
        provenance_column: None,
    };
    let ds = Dataset::from_reader(s.data.as_bytes(), &opts).unwrap();
    let mut inputs = Inputs::new(ds, parse_dc_file(&s.dcs).unwrap());
    inputs.groundtruth = Some(read_groundtruth(s.groundtruth.as_bytes(), &inputs.dataset).unwrap());
    inputs
}

#[test]
fn snippet_is_fully_corrected_at_higher_tau() {
    let inputs = inspection_inputs();
    let out = run(
        &inputs,
        &Settings {
            tau: 0.7,
            ..Default::default()
        },
        false,
    )
    .unwrap();
    let r = out.repair.unwrap();
    let want = Dataset::from_reader(inspection().corrected.as_bytes(), &LoadOptions::default()).unwrap();
    assert_eq!(r.repaired.to_csv_string(), want.to_csv_string());
    let e = r.evaluation.unwrap();
    assert_eq!((e.precision, e.recall), (1.0, 1.0));
}

#[test]
fn repaired_table_differs_only_on_repairs() {
    let inputs = synthetic_inputs(300, 7);
    let out = run(&inputs, &Settings::default(), false).unwrap();
    let r = out.repair.as_ref().unwrap();
    let repaired: BTreeSet<_> = r.repairs.iter().map(|x| x.cell).collect();
    let query: BTreeSet<_> = out.grounded.graph.query_variables().map(|v| v.cell).collect();
    for cell in inputs.dataset.cells() {
        let (before, after) = (inputs.dataset.value(cell), r.repaired.value(cell));
        if repaired.contains(&cell) {
            assert_ne!(before, after);
            assert!(query.contains(&cell), "evidence cell {cell} modified");
        } else {
            assert_eq!(before, after);
        }
    }
    for x in &r.repairs {
        let v = &out.grounded.graph.variables[inputs.dataset.cell_index(x.cell)];
        assert!(v.domain.contains(&x.new));
        assert!((0.0..=1.0).contains(&x.marginal));
    }
}

#[test]
fn report_buckets_cover_every_query_variable() {
    let inputs = synthetic_inputs(200, 3);
    let out = run(&inputs, &Settings::default(), false).unwrap();
    let report = String::from_utf8(out.report(&inputs)).unwrap();
    let lines: Vec<serde_json::Value> = report.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    let summary = &lines.last().unwrap()["summary"];
    let total: u64 = summary["buckets"]
        .as_array()
        .unwrap()
        .iter()
        .map(|b| b["count"].as_u64().unwrap())
        .sum();
    assert_eq!(total as usize, out.grounded.stats.query_variables);
    assert_eq!(lines.len() - 1, out.grounded.stats.query_variables);
    assert!(summary["evaluation"]["precision"].is_number());
}

#[test]
fn dry_run_stops_after_grounding() {
    let inputs = inspection_inputs();
    let settings = Settings {
        mode: Mode::Factors,
        ..Default::default()
    };
    let out = run(&inputs, &settings, true).unwrap();
    assert!(out.repair.is_none());
    assert!(out.grounded.stats.hard_factors > 0);
    assert!(out.grounded.stats.hard_factors <= out.grounded.stats.pair_bound);
    assert!(out.summary().contains("HARD_DC"));
}

#[test]
fn coupled_modes_run_end_to_end() {
    let inputs = synthetic_inputs(150, 1);
    for mode in [Mode::Factors, Mode::Both] {
        let settings = Settings {
            mode,
            samples: 300,
            burnin: 30,
            ..Default::default()
        };
        let out = run(&inputs, &settings, false).unwrap();
        let e = out.repair.unwrap().evaluation.unwrap();
        assert!(e.precision > 0.5, "{mode:?}: {e:?}");
    }
}

#[test]
fn closed_form_agrees_with_gibbs_in_feats_mode() {
    let inputs = synthetic_inputs(200, 5);
    let gibbs = run(&inputs, &Settings::default(), false).unwrap();
    let closed = run(
        &inputs,
        &Settings {
            inference: Inference::ClosedForm,
            ..Default::default()
        },
        false,
    )
    .unwrap();
    let diff = gibbs
        .repair
        .unwrap()
        .marginals
        .max_abs_diff(&closed.repair.unwrap().marginals);
    assert!(diff < 0.05, "{diff}");
}

#[test]
fn provenance_adds_source_features() {
    let csv = "tid,src,A,B\n1,s1,x,1\n2,s1,x,1\n3,s2,x,2\n4,s1,y,3\n";
    let opts = LoadOptions {
        tid_column: Some("tid".into()),
        provenance_column: Some("src".into()),
    };
    let ds = Dataset::from_reader(csv.as_bytes(), &opts).unwrap();
    let inputs = Inputs::new(ds, parse_dc_file("t1&t2&EQ(t1.A,t2.A)&IQ(t1.B,t2.B)\n").unwrap());
    let out = run(&inputs, &Settings::default(), true).unwrap();
    let keys = &out.grounded.graph.keys;
    assert!(keys.iter().any(|k| format!("{k:?}").contains("Source")));
}

#[test]
fn errors_carry_their_stage() {
    let ds = Dataset::from_reader("A,B\n1,2\n".as_bytes(), &LoadOptions::default()).unwrap();
    let inputs = Inputs::new(ds, parse_dc_file("t1&t2&EQ(t1.A,t2.A)&IQ(t1.C,t2.C)\n").unwrap());
    let err = run(&inputs, &Settings::default(), false).err().unwrap();
    assert_eq!(err.stage, Stage::Detect);
    assert!(err.to_string().starts_with("detect: "));

    let ds = Dataset::from_reader("A,B\n1,2\n".as_bytes(), &LoadOptions::default()).unwrap();
    let inputs = Inputs::new(ds, vec![]);
    let bad = Settings {
        tau: 1.5,
        ..Default::default()
    };
    assert!(run(&inputs, &bad, false).is_err());
}

#[test]
fn loads_inputs_from_files() {
    let dir = tempfile::tempdir().unwrap();
    let f = inspection();
    let path = |n: &str| dir.path().join(n);
    std::fs::write(path("data.csv"), f.data).unwrap();
    std::fs::write(path("dcs.txt"), f.dcs).unwrap();
    std::fs::write(path("dict.csv"), f.dict).unwrap();
    std::fs::write(path("mds.txt"), f.mds).unwrap();
    std::fs::write(path("noisy.csv"), f.noisy_cells).unwrap();
    std::fs::write(path("gt.csv"), &f.groundtruth).unwrap();
    let inputs = load_inputs(&InputPaths {
        input: path("data.csv"),
        dcs: path("dcs.txt"),
        dicts: vec![("addr".into(), path("dict.csv"))],
        mds: Some(path("mds.txt")),
        noisy_cells: Some(path("noisy.csv")),
        groundtruth: Some(path("gt.csv")),
        ..Default::default()
    })
    .unwrap();
    assert_eq!(inputs.constraints.len(), 4);
    assert_eq!(inputs.mds.len(), 3);
    assert_eq!(inputs.noisy_cells.len(), 1);
    assert_eq!(inputs.groundtruth.as_ref().unwrap().len(), 24);

    let missing = load_inputs(&InputPaths {
        input: path("nope.csv"),
        dcs: path("dcs.txt"),
        ..Default::default()
    })
    .err()
    .unwrap();
    assert_eq!(missing.stage, Stage::Load);
}

#[test]
fn identical_seeds_give_identical_outputs() {
    let inputs = synthetic_inputs(250, 11);
    let settings = Settings {
        seed: 11,
        chains: 2,
        ..Default::default()
    };
    let a = run(&inputs, &settings, false).unwrap();
    let b = run(&inputs, &settings, false).unwrap();
    assert_eq!(a.report(&inputs), b.report(&inputs));
    assert_eq!(
        a.repair.unwrap().repaired.to_csv_string(),
        b.repair.unwrap().repaired.to_csv_string()
    );
}
