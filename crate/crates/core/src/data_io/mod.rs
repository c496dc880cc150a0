// SPDX-License-Identifier: MIT OR Apache-2.0

//! Dataset loaders, reports and figures.

pub mod datasets;
pub mod render;
pub mod report;

pub use datasets::{
    load_annotations, load_facts, load_insight, load_lexicon, save_annotations, save_facts, save_insight,
    save_lexicon, split_variants, AnnotatedGeneration, AnnotatedWord, AnnotationsFile, FactEntry, FactsDataset,
    InsightDataset, InsightEntry, LanguageRecord, LexiconFile, LexiconRecord,
};
pub use render::{render_lens_svg, render_routing_bars, render_trace_svg, write_svg, LensRenderOptions};
pub use report::{read_report, write_report, Metadata, Payload, Report};
