use std::fs;
use std::path::Path;

use cvc::dataio::{load_csv, write_csv, TableSchema};
use cvc::RunError;
use cvc_core::estimators::cvc_score;
use cvc_core::predictors::{make_folds, PredictorSpec};
use cvc_core::scenario::PredictionScenario;
use cvc_core::sim::{generate_hierarchical, substream, SimDesign};

fn schema(fixed: &[&str], clusters: &[&str], intercept: bool) -> TableSchema {
    TableSchema {
        response: "y".into(),
        fixed: fixed.iter().map(|s| s.to_string()).collect(),
        clusters: clusters.iter().map(|s| s.to_string()).collect(),
        coordinates: None,
        time: None,
        intercept,
    }
}

fn write(dir: &Path, text: &str) -> std::path::PathBuf {
    let path = dir.join("data.csv");
    fs::write(&path, text).unwrap();
    path
}

#[test]
fn small_file_loads() {
    let dir = tempfile::tempdir().unwrap();
    let path = write(dir.path(), "y,x,g\n1.5,2,a\n2.5, 3 ,a\n-1,4,b\n");
    let data = load_csv(&path, &schema(&["x"], &["g"], true)).unwrap();
    assert_eq!(data.len(), 3);
    assert_eq!(data.x().ncols(), 2);
    assert_eq!(data.x()[(1, 0)], 1.0);
    assert_eq!(data.x()[(1, 1)], 3.0);
    assert_eq!(data.y()[2], -1.0);
    assert_eq!(data.design().labels(0), &[0, 0, 1]);
}

#[test]
fn inner_labels_are_relative_to_their_cluster() {
    let dir = tempfile::tempdir().unwrap();
    let path = write(dir.path(), "y,x,c,s\n1,0,a,1\n2,0,a,2\n3,0,b,1\n4,0,b,1\n");
    let data = load_csv(&path, &schema(&["x"], &["c", "s"], false)).unwrap();
    assert_eq!(data.design().labels(1), &[0, 1, 2, 2]);
}

#[test]
fn blank_value_names_row_and_column() {
    let dir = tempfile::tempdir().unwrap();
    let path = write(dir.path(), "y,x\n1,2\n,3\n4,5\n");
    match load_csv(&path, &schema(&["x"], &[], false)) {
        Err(RunError::Row { row, column, .. }) => {
            assert_eq!(row, 2);
            assert_eq!(column, "y");
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn malformed_tables_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = write(dir.path(), "y,x\n1,2\n3,4\n");
    let missing = load_csv(&path, &schema(&["z"], &[], false)).unwrap_err();
    assert!(missing.to_string().contains("missing column `z`"), "{missing}");

    let path = write(dir.path(), "y,x\n1,2\n3,abc\n");
    match load_csv(&path, &schema(&["x"], &[], false)) {
        Err(RunError::Row {
            row: 2,
            column,
            message,
            ..
        }) => {
            assert_eq!(column, "x");
            assert!(message.contains("abc"));
        }
        other => panic!("unexpected {other:?}"),
    }

    let path = write(dir.path(), "y,x\n1,2\n3,inf\n");
    assert!(load_csv(&path, &schema(&["x"], &[], false)).is_err());
    let path = write(dir.path(), "y,x\n1,2\n");
    assert!(load_csv(&path, &schema(&["x"], &[], false)).is_err());
    assert_eq!(missing.exit_code(), 2);
}

#[test]
fn generated_data_round_trips_bit_for_bit() {
    let design = SimDesign::standard(2);
    let (data, _) = generate_hierarchical(&design, &mut substream(8, 0, 0)).unwrap();
    let mut fixed = vec!["time_x".to_string()];
    fixed.extend((3..=9).map(|i| format!("x{i}")));
    let schema = TableSchema {
        response: "y".into(),
        fixed,
        clusters: vec!["cluster".into(), "subcluster".into()],
        coordinates: None,
        time: Some("time".into()),
        intercept: true,
    };
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sim.csv");
    write_csv(&path, &data, &schema).unwrap();
    let back = load_csv(&path, &schema).unwrap();
    assert_eq!(back.y(), data.y());
    assert_eq!(back.x(), data.x());
    assert_eq!(back.design(), data.design());

    let folds = make_folds(data.len(), 5, 1).unwrap();
    let truth = design.truth();
    let scenario: PredictionScenario = "share:u".parse().unwrap();
    let a = cvc_score(&data, &PredictorSpec::Gls, &folds, &truth, &scenario).unwrap();
    let b = cvc_score(&back, &PredictorSpec::Gls, &folds, &truth, &scenario).unwrap();
    assert_eq!(a.cv_c.to_bits(), b.cv_c.to_bits());
}
