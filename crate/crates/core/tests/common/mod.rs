#![allow(dead_code)]

use faqsearch_core::data::{parse_pairs_tsv, LabeledData, PairExample};
use faqsearch_core::encoder::EncoderConfig;
use faqsearch_core::model::{Model, ModelConfig};
use faqsearch_core::multitask::{LossWeights, MatchHeadConfig};

pub const PAIRS: &str = "\
how do i reset my password\thow can i reset the password\t1
how can i reset the password\tsteps to reset password\t1
steps to reset password\ti forgot my password\t1
how do i cancel my order\thow can i cancel the order\t1
how can i cancel the order\tsteps to cancel order\t1
steps to cancel order\tplease cancel my order\t1
how do i reset my password\thow do i cancel my order\t0
steps to reset password\tsteps to cancel order\t0
where is my parcel\thow do i reset my password\t0
i forgot my password\tplease cancel my order\t0
";

pub fn labeled() -> LabeledData {
    LabeledData::prepare(parse_pairs_tsv(PAIRS).unwrap(), Vec::new(), 1, 4)
}

pub fn model_with(encoder: EncoderConfig, lambda: f64, seed: u64) -> (Model, Vec<PairExample>) {
    let data = labeled();
    let cfg = ModelConfig {
        encoder,
        match_head: MatchHeadConfig::default(),
        loss: LossWeights { lambda },
        num_classes: data.labeling.num_classes(),
    };
    let model = Model::new(cfg, data.vocab, data.chars, None, seed).unwrap();
    (model, data.train)
}

pub fn tiny_model(seed: u64) -> (Model, Vec<PairExample>) {
    model_with(EncoderConfig::tiny(), 0.8, seed)
}

pub fn tokens(s: &str) -> Vec<String> {
    faqsearch_core::data::tokenize(s).unwrap()
}
