use std::path::PathBuf;

use twopoint::config::ScenarioConfig;

fn testbed_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs/testbed.toml")
}

#[test]
fn shipped_testbed_matches_builtin() {
    let from_file = ScenarioConfig::from_path(&testbed_path()).unwrap();
    let builtin = ScenarioConfig::testbed();
    assert_eq!(from_file, builtin);
    assert_eq!(from_file.hash(), builtin.hash());
}

#[test]
fn builtin_renders_and_reparses() {
    let text = ScenarioConfig::testbed().to_toml_string();
    assert_eq!(ScenarioConfig::from_toml_str(&text).unwrap(), ScenarioConfig::testbed());
}
