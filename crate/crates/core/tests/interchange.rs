//! Files laid out the way an external extractor writes them, built byte by
//! byte, must load exactly.

use std::io::Write;
use std::path::Path;

use layerprobe::featurestore::{
    load_alignments, read_feature_file, read_feature_header, read_gold_sts, FeatureStore,
};
use layerprobe::ProbeError;

const LAYERS: u32 = 13;
const DIM: usize = 6;

/// S3MF bytes for a `rows x cols` payload at a shift of `num/den` seconds.
fn s3mf(rows: u64, cols: u32, num: u32, den: u32, payload: &[f32]) -> Vec<u8> {
    let mut b = Vec::new();
    b.extend_from_slice(b"S3MF");
    b.extend_from_slice(&1u16.to_le_bytes());
    b.push(0);
    b.push(0);
    b.extend_from_slice(&rows.to_le_bytes());
    b.extend_from_slice(&cols.to_le_bytes());
    b.extend_from_slice(&num.to_le_bytes());
    b.extend_from_slice(&den.to_le_bytes());
    for v in payload {
        b.extend_from_slice(&v.to_le_bytes());
    }
    b
}

fn payload(layer: u32, rows: usize) -> Vec<f32> {
    let special = [
        -0.0f32,
        f32::MIN_POSITIVE,
        1e-45,
        f32::MAX,
        -f32::MAX,
        0.1,
        1.0 / 3.0,
    ];
    (0..rows * DIM)
        .map(|i| {
            if i % 11 == 0 {
                special[(i / 11) % special.len()]
            } else {
                (i as f32 * 0.37 + layer as f32).sin() * 10f32.powi((i % 7) as i32 - 3)
            }
        })
        .collect()
}

/// 16 kHz audio of one second with a 320-sample hop gives 50 frames.
fn frames_for(seconds: f64) -> usize {
    let samples = (seconds * 16000.0).round() as usize;
    samples / 320
}

fn write_extractor_output(root: &Path, model: &str, utts: &[&str]) {
    let mut manifest = std::fs::File::create(root.join("manifest.jsonl")).unwrap();
    for utt in utts {
        let rows = frames_for(1.0);
        for layer in 0..LAYERS {
            let rel = format!("{model}/{utt}/layer{layer:02}.s3mf");
            std::fs::create_dir_all(root.join(model).join(utt)).unwrap();
            std::fs::write(
                root.join(&rel),
                s3mf(rows as u64, DIM as u32, 1, 50, &payload(layer, rows)),
            )
            .unwrap();
            writeln!(
                manifest,
                r#"{{"model":"{model}","utterance_id":"{utt}","layer":{layer},"path":"{rel}"}}"#
            )
            .unwrap();
        }
    }
}

#[test]
fn extractor_output_loads_bit_exactly() {
    let dir = tempfile::tempdir().unwrap();
    write_extractor_output(dir.path(), "base", &["utt-a", "utt-b"]);
    let store = FeatureStore::open(dir.path().join("manifest.jsonl")).unwrap();
    assert_eq!(store.layers("base").len(), LAYERS as usize);
    for utt in ["utt-a", "utt-b"] {
        for layer in 0..LAYERS {
            let f = store.load("base", utt, layer).unwrap();
            assert_eq!(f.num_frames(), 50);
            assert_eq!(f.dim(), DIM);
            assert_eq!(f.frame_shift_secs(), 0.02);
            assert!((f.duration_secs() - 1.0).abs() < 1e-12);
            assert_eq!(f.utterance_id, utt);
            assert_eq!(f.layer, layer);
            let want: Vec<u32> = payload(layer, 50).iter().map(|v| v.to_bits()).collect();
            let got: Vec<u32> = f.as_slice().iter().map(|v| v.to_bits()).collect();
            assert_eq!(got, want);
        }
    }
}

#[test]
fn header_read_does_not_need_the_payload_decoded() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.s3mf");
    std::fs::write(&path, s3mf(3, 2, 1, 100, &[1.0; 6])).unwrap();
    let h = read_feature_header(&path).unwrap();
    assert_eq!((h.rows, h.cols, h.payload_len()), (3, 2, 24));
    assert_eq!(h.frame_shift.secs(), 0.01);
}

#[test]
fn malformed_files_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cases: Vec<(&str, Vec<u8>)> = vec![
        ("short", s3mf(4, 2, 1, 50, &[0.5; 7])),
        ("magic", {
            let mut b = s3mf(1, 1, 1, 50, &[0.5]);
            b[0] = b'X';
            b
        }),
        ("version", {
            let mut b = s3mf(1, 1, 1, 50, &[0.5]);
            b[4] = 2;
            b
        }),
        ("nan", s3mf(1, 2, 1, 50, &[0.5, f32::NAN])),
        ("empty", s3mf(0, 2, 1, 50, &[])),
        ("shift", s3mf(1, 1, 0, 50, &[0.5])),
        ("header", b"S3MF\x01\x00".to_vec()),
    ];
    for (name, bytes) in cases {
        let path = dir.path().join(format!("{name}.s3mf"));
        std::fs::write(&path, bytes).unwrap();
        assert!(read_feature_file(&path).is_err(), "{name} accepted");
    }
    let truncated = dir.path().join("short.s3mf");
    assert!(matches!(
        read_feature_file(&truncated),
        Err(ProbeError::Truncated(_))
    ));
}

#[test]
fn manifest_paths_resolve_against_the_manifest_directory() {
    let dir = tempfile::tempdir().unwrap();
    let nested = dir.path().join("dump");
    std::fs::create_dir(&nested).unwrap();
    write_extractor_output(&nested, "large", &["u1"]);
    let cwd_independent = FeatureStore::open(nested.join("manifest.jsonl")).unwrap();
    assert!(cwd_independent.load("large", "u1", 12).is_ok());
    assert!(cwd_independent.load("large", "u1", 13).is_err());
}

#[test]
fn hand_written_alignments_and_gold_parse() {
    let dir = tempfile::tempdir().unwrap();
    let align = dir.path().join("align.csv");
    std::fs::write(
        &align,
        "word,utterance_id,end_s,start_s\nHello,u2,0.5,0.1\nworld,u1,0.9,0.5\nThe,u1,0.4,0.0\n",
    )
    .unwrap();
    let spans = load_alignments(&align).unwrap();
    let got: Vec<(&str, &str)> = spans
        .iter()
        .map(|s| (s.utterance_id.as_str(), s.word.as_str()))
        .collect();
    assert_eq!(got, [("u1", "the"), ("u1", "world"), ("u2", "hello")]);

    let gold = dir.path().join("gold.tsv");
    std::fs::write(
        &gold,
        "pair_id\tgold_score\tside_a\tside_b\tp1\t4.5\tu1\tu2,u3\n".replace("\tp1", "\np1"),
    )
    .unwrap();
    let pairs = read_gold_sts(&gold).unwrap();
    assert_eq!(pairs.len(), 1);
    assert_eq!(pairs[0].side_b, ["u2", "u3"]);
    assert_eq!(pairs[0].gold_score, 4.5);
    assert!(pairs[0].text_a.is_none());
}
