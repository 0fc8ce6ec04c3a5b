// SPDX-License-Identifier: Apache-2.0

//! Fuzz entry points. Shared with the corpus replay test in `crates/cli`.
//! Each one must return without panicking on any input, and anything that
//! parses must survive a render/parse round trip.

#![allow(dead_code)]

use kdesign::phantom::{decode_dataset, encode_dataset, parse_manifest, render_manifest};
use kdesign_cli::result::{parse_result, render_result};
use kdesign_cli::ExperimentConfig;

/// Input layout: `u16` LE manifest length, manifest text, dataset payload.
pub fn dataset_decode(data: &[u8]) {
    if data.len() < 2 {
        return;
    }
    let m = (u16::from_le_bytes([data[0], data[1]]) as usize).min(data.len() - 2);
    let manifest = String::from_utf8_lossy(&data[2..2 + m]);
    let payload = &data[2 + m..];
    if let Ok(ds) = decode_dataset(payload, &manifest) {
        let again =
            decode_dataset(&encode_dataset(&ds), &render_manifest(&ds.splits)).expect("re-encoded dataset decodes");
        assert_eq!(encode_dataset(&again), encode_dataset(&ds));
    }
}

/// Input layout: one byte with the expected slice count, then manifest text.
pub fn manifest_parse(data: &[u8]) {
    let Some((&expected, text)) = data.split_first() else { return };
    let Ok(text) = std::str::from_utf8(text) else { return };
    if let Ok(splits) = parse_manifest(text, expected as usize) {
        assert_eq!(
            parse_manifest(&render_manifest(&splits), expected as usize).expect("rendered manifest parses"),
            splits
        );
    }
}

pub fn config_parse(data: &[u8]) {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cfg) = ExperimentConfig::parse(text) {
        let _ = cfg.validate();
        if let Ok(rendered) = cfg.render() {
            let back = ExperimentConfig::parse(&rendered).expect("rendered config parses");
            assert_eq!(back.render().ok(), Some(rendered));
        }
    }
}

pub fn result_parse(data: &[u8]) {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(rec) = parse_result(text) {
        let rendered = render_result(&rec);
        let back = parse_result(&rendered).expect("rendered result parses");
        assert_eq!(render_result(&back), rendered);
    }
}
