//! Replays the checked-in fuzz seeds, plus random mutations of them, through
//! the same properties the fuzz targets assert.

use std::fs;
use std::path::PathBuf;

use patrol::harness::{parse_event_log, recompute_idleness_metrics, Config};
use patrol::map::parse_map;
use patrol::nn::{decode_checkpoint, encode_checkpoint};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn seeds(target: &str) -> Vec<(String, Vec<u8>)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut out: Vec<_> = fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap())
        })
        .collect();
    out.sort();
    assert!(!out.is_empty(), "no seeds for {target}");
    out
}

/// Each seed as-is, then a few hundred copies with bytes flipped, dropped or
/// duplicated.
fn inputs(target: &str) -> Vec<Vec<u8>> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut out = Vec::new();
    for (_, s) in seeds(target) {
        out.push(s.clone());
        for _ in 0..200 {
            let mut m = s.clone();
            for _ in 0..rng.gen_range(1..4) {
                if m.is_empty() {
                    break;
                }
                let i = rng.gen_range(0..m.len());
                match rng.gen_range(0..3) {
                    0 => m[i] ^= 1 << rng.gen_range(0..8),
                    1 => {
                        m.remove(i);
                    }
                    _ => m.insert(i, m[i]),
                }
            }
            out.push(m);
        }
    }
    out
}

fn map_property(data: &[u8]) {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(map) = parse_map(text) {
        assert_eq!(parse_map(&map.render()).unwrap(), map);
    }
}

fn checkpoint_property(data: &[u8]) {
    if let Ok((model, manifest)) = decode_checkpoint(data) {
        let (again, _) = decode_checkpoint(&encode_checkpoint(&model, manifest.episode)).unwrap();
        assert_eq!(again.actor_params, model.actor_params);
        assert_eq!(again.critic_params, model.critic_params);
    }
}

#[test]
fn map_corpus() {
    let valid = seeds("parse_map").iter().filter(|(_, s)| parse_map(std::str::from_utf8(s).unwrap()).is_ok()).count();
    assert!(valid >= 5);
    for d in inputs("parse_map") {
        map_property(&d);
    }
}

#[test]
fn config_corpus() {
    assert!(Config::from_json(std::str::from_utf8(&seeds("parse_config")[0].1).unwrap(), None).is_ok());
    for d in inputs("parse_config") {
        if let Ok(text) = std::str::from_utf8(&d) {
            let _ = Config::from_json(text, None);
        }
    }
}

#[test]
fn checkpoint_corpus() {
    let all = seeds("decode_checkpoint");
    assert!(all.iter().any(|(_, s)| decode_checkpoint(s).is_ok()));
    assert!(all.iter().any(|(_, s)| decode_checkpoint(s).is_err()));
    for d in inputs("decode_checkpoint") {
        checkpoint_property(&d);
    }
}

#[test]
fn event_log_corpus() {
    let all = seeds("parse_event_log");
    let (_, full) = all.iter().find(|(n, _)| n == "sebs_example6").unwrap();
    assert!(!parse_event_log(std::str::from_utf8(full).unwrap()).unwrap().is_empty());
    for d in inputs("parse_event_log") {
        if let Ok(lines) = std::str::from_utf8(&d).map_err(drop).and_then(|t| parse_event_log(t).map_err(drop)) {
            let _ = recompute_idleness_metrics(&lines, 0, 0);
        }
    }
}
