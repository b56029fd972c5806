//! A small valid EDF file and header mutations with the byte offset each
//! must be rejected at.

use utime::signal::edf::{encode_edf, EdfChannel};

pub type Mutation = (&'static str, Box<dyn Fn(&mut Vec<u8>)>, u64);

pub fn base_file() -> Vec<u8> {
    let a: Vec<f64> = (0..600).map(|i| (i as f64 * 0.05).sin() * 80.0).collect();
    let b: Vec<f64> = (0..300).map(|i| i as f64 * 0.5 - 60.0).collect();
    encode_edf(
        &[
            EdfChannel {
                label: "EEG Fpz-Cz",
                physical_dimension: "uV",
                sample_rate: 100.0,
                samples: &a,
            },
            EdfChannel {
                label: "EOG horizontal",
                physical_dimension: "uV",
                sample_rate: 50.0,
                samples: &b,
            },
        ],
        2.0,
        "subject",
    )
    .unwrap()
}

fn put(f: &mut [u8], at: usize, width: usize, text: &str) {
    let mut v = text.as_bytes().to_vec();
    v.resize(width, b' ');
    f[at..at + width].copy_from_slice(&v);
}

/// Two-signal header: per-signal fields start at these offsets.
const PHYS_MIN: usize = 256 + 2 * (16 + 80 + 8);
const DIG_MIN: usize = PHYS_MIN + 2 * 16;
const DIG_MAX: usize = DIG_MIN + 2 * 8;
const SAMPLES: usize = DIG_MAX + 2 * 8 + 2 * 80;

pub fn mutations() -> Vec<Mutation> {
    vec![
        ("version", Box::new(|f| put(f, 0, 8, "1")), 0),
        ("start date", Box::new(|f| put(f, 168, 8, "31-12-99")), 168),
        ("header bytes", Box::new(|f| put(f, 184, 8, "512")), 184),
        ("record count", Box::new(|f| put(f, 236, 8, "0")), 236),
        ("record duration", Box::new(|f| put(f, 244, 8, "-2")), 244),
        ("signal count", Box::new(|f| put(f, 252, 4, "x")), 252),
        ("physical minimum", Box::new(|f| put(f, PHYS_MIN + 8, 8, "abc")), (PHYS_MIN + 8) as u64),
        ("zero digital range", Box::new(|f| put(f, DIG_MIN, 8, "32767")), DIG_MIN as u64),
        ("digital maximum range", Box::new(|f| put(f, DIG_MAX + 8, 8, "40000")), (DIG_MAX + 8) as u64),
        ("samples per record", Box::new(|f| put(f, SAMPLES, 8, "0")), SAMPLES as u64),
        ("short header", Box::new(|f| f.truncate(100)), 100),
        // header plus two complete 600-byte records; the third is incomplete
        ("truncated data", Box::new(|f| f.truncate(f.len() - 10)), 768 + 2 * 600),
    ]
}
