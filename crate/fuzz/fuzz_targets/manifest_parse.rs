// SPDX-License-Identifier: Apache-2.0

#![no_main]

#[path = "../src/entry.rs"]
mod entry;

libfuzzer_sys::fuzz_target!(|data: &[u8]| entry::manifest_parse(data));
