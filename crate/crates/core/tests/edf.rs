#[path = "support/edf_corpus.rs"]
mod edf_corpus;

use edf_corpus::{base_file, mutations};
use utime::signal::edf::{parse_edf, read_edf, EdfError};
use utime::synth::{generate_dataset, generate_record, record_seed, SynthConfig};

#[test]
fn base_file_parses() {
    let r = parse_edf(&base_file()).unwrap();
    assert_eq!(r.signals.len(), 2);
    assert_eq!(r.header.declared_records, Some(3));
    assert_eq!(r.signals[1].sample_rate, 50.0);
}

#[test]
fn malformed_headers_are_rejected_with_positions() {
    let cases = mutations();
    assert!(cases.len() >= 10);
    for (name, mutate, offset) in cases {
        let mut f = base_file();
        mutate(&mut f);
        let err = parse_edf(&f).expect_err(name);
        assert_eq!(err.offset(), Some(offset), "{name}: {err}");
        if !matches!(err, EdfError::Truncated { .. }) {
            assert!(err.to_string().contains(&format!("byte {offset}")), "{name}: {err}");
        }
    }
}

#[test]
fn synthetic_dataset_roundtrips_within_one_quantization_step() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SynthConfig {
        channels: 2,
        ..Default::default()
    };
    let entries = generate_dataset(dir.path(), 11, 3, 40, &cfg).unwrap();
    for (s, e) in entries.iter().enumerate() {
        let want = generate_record(record_seed(11, s), 40, &cfg).unwrap();
        let got = read_edf(&e.record_path).unwrap();
        assert_eq!(got.signals.len(), 2);
        for (sig, (hdr, x)) in got.signals.iter().zip(got.header.signals.iter().zip(&want.channels)) {
            assert_eq!(sig.samples.len(), x.len());
            let step = hdr.gain();
            let worst = sig.samples.iter().zip(x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(worst <= step, "{}: error {worst} exceeds step {step}", sig.label);
        }
    }
}
