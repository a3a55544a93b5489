use std::path::Path;

use ndadam::harness::{CompareConfig, ExperimentConfig};

#[test]
fn shipped_configs_parse_and_validate() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in std::fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().and_then(|e| e.to_str()) != Some("json") {
            continue;
        }
        let text = std::fs::read_to_string(&path).unwrap();
        if text.contains("\"runs\"") {
            let c: CompareConfig = serde_json::from_str(&text).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            for r in &c.runs {
                r.validate().unwrap();
            }
        } else {
            ExperimentConfig::load(&path).unwrap().validate().unwrap();
        }
        seen += 1;
    }
    assert!(seen >= 4);
}
