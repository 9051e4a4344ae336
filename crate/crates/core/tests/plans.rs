use std::path::PathBuf;

use agmp_core::schema::{parse_l1, plan_stats, serialize_l1, validate, PlanStats, SchemaDoc};

fn plan_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/plans")
}

fn read(name: &str) -> String {
    std::fs::read_to_string(plan_dir().join(format!("{name}.xml"))).unwrap()
}

const TABLE: &[(&str, usize, usize)] = &[
    ("three_pictures_row_of_5", 8, 0),
    ("four_trees_two_sensors", 8, 0),
    ("reward_shaping", 20, 0),
    ("five_nested_if", 14, 5),
    ("if_else_nesting", 16, 5),
    ("four_corners_relative", 8, 0),
    ("four_corners_absolute", 8, 0),
    ("sample_100m", 10, 0),
    ("north_center_east", 6, 0),
    ("relative_conditionals", 8, 2),
    ("relative_absolute_conditionals", 17, 2),
];

#[test]
fn fixtures_validate_with_expected_counts() {
    for &(name, tasks, conds) in TABLE {
        let xml = read(name);
        let report = validate(&xml, SchemaDoc::builtin());
        assert!(report.is_valid(), "{name}: {report}");
        let plan = parse_l1(&xml).unwrap();
        assert_eq!(plan_stats(&plan), PlanStats { task_count: tasks, conditional_count: conds }, "{name}");
    }
}

#[test]
fn fixtures_are_canonical() {
    for &(name, ..) in TABLE {
        let xml = read(name);
        assert_eq!(serialize_l1(&parse_l1(&xml).unwrap()), xml, "{name}");
    }
}

#[test]
fn every_fixture_is_listed() {
    let count = std::fs::read_dir(plan_dir()).unwrap().filter(|e| {
        e.as_ref().unwrap().path().extension().is_some_and(|x| x == "xml")
    }).count();
    assert_eq!(count, TABLE.len());
}
