#![allow(dead_code)]

use pdalign::config::RunConfig;
use pdalign::inference::{ClassDifference, ClassDifferenceLine, PromptBank, PromptKind, PromptLine};
use pdalign::pipeline::{
    generate_dataset, sample_pairs, ComparisonRecord, DifferenceSource, FilterOutcome, GenerationOptions, RejectReason,
    TruncationRule,
};
use pdalign::toyworld::{difference_sentence, generate_world, ItemRecord, ToyWorld, ToyWorldConfig, KINDS};
use pdalign::train::{fit, fit_captions, EncoderParams, TrainLog};

fn accept(text: &str) -> FilterOutcome {
    FilterOutcome::Accept { text: text.into(), truncated: None }
}

fn cut(text: &str, rule: TruncationRule) -> FilterOutcome {
    FilterOutcome::Accept { text: text.into(), truncated: Some(rule) }
}

fn reject(r: RejectReason) -> FilterOutcome {
    FilterOutcome::Reject(r)
}

/// Raw generations with hand-applied expected outcomes.
pub fn filter_fixtures() -> Vec<(&'static str, FilterOutcome)> {
    use RejectReason::*;
    use TruncationRule::*;
    vec![
        ("The cat is smaller. #include <stdio.h>", reject(ContainsInclude)),
        ("#include <iostream>\nint main() {}", reject(ContainsInclude)),
        ("The dog is larger. #define MAX 10", reject(ContainsDefine)),
        ("#define X", reject(ContainsDefine)),
        ("#include and #define both", reject(ContainsInclude)),
        ("include this: #includes", reject(ContainsInclude)),
        ("\n\n\n\n\n\n\n\n", reject(RepeatedNewlines)),
        ("The bird is yellow.\n\n\n\n\n\n\n\nQ: next", reject(RepeatedNewlines)),
        ("The lion is larger.\n\n\n\n\n\n\n\n\n", reject(RepeatedNewlines)),
        ("Seven newlines\n\n\n\n\n\n\nthen text", accept("Seven newlines\n\n\n\n\n\n\nthen text")),
        ("The dog is larger and white.\nQ: What is...", cut("The dog is larger and white.", QMarker)),
        ("Smaller bird, yellow beak. Note: this is generic.", cut("Smaller bird, yellow beak.", NoteMarker)),
        ("The cat is black. Note: guess.\nQ: more", cut("The cat is black.", NoteMarker)),
        ("The cat is black.\nQ: more Note: x", cut("The cat is black.", QMarker)),
        ("The fish is red.Q:", cut("The fish is red.", QMarker)),
        ("The wolf is larger.\n\nQ: What is the visual difference between", cut("The wolf is larger.", QMarker)),
        ("The frog is green;\nNote:", cut("The frog is green;", NoteMarker)),
        ("The cow is larger.Q:Q:Q:", cut("The cow is larger.", QMarker)),
        ("Q: What is the difference?", reject(EmptyAfterClean)),
        ("Note: I cannot see images.", reject(EmptyAfterClean)),
        ("Note: first. Q: second", reject(EmptyAfterClean)),
        ("  \nQ: only a question", reject(EmptyAfterClean)),
        ("", reject(EmptyAfterClean)),
        ("   \n\t  ", reject(EmptyAfterClean)),
        ("  The first is larger.  ", accept("The first is larger.")),
        ("The horse is brown, while the cow is spotted.", accept("The horse is brown, while the cow is spotted.")),
        ("A: The dog is larger.", accept("A: The dog is larger.")),
        ("The duck is small. q: lowercase", accept("The duck is small. q: lowercase")),
        ("The owl is grey. NOTE: caps", accept("The owl is grey. NOTE: caps")),
        ("Use # include spacing", accept("Use # include spacing")),
        ("The mouse is small. #DEFINE upper", accept("The mouse is small. #DEFINE upper")),
        ("The sheep is white. Notes: fine", accept("The sheep is white. Notes: fine")),
        ("The bear has \u{201c}brown fur\u{201d}.", accept("The bear has \u{201c}brown fur\u{201d}.")),
        ("Line one\nLine two\n\nLine three\n", accept("Line one\nLine two\n\nLine three")),
    ]
}

pub const N_TRAIN: usize = 70;

/// Default toy world, caption-pretrained and difference-finetuned encoders.
/// Training pairs come from the first `N_TRAIN` items; the rest are held out.
pub struct ToyRun {
    pub world: ToyWorld,
    pub items: Vec<ItemRecord>,
    pub held_out: Vec<ItemRecord>,
    pub records: Vec<ComparisonRecord>,
    pub init: EncoderParams,
    pub pretrained: EncoderParams,
    pub finetuned: EncoderParams,
    pub log: TrainLog,
}

pub fn toy_run() -> ToyRun {
    let cfg = RunConfig::default();
    let world = generate_world(&ToyWorldConfig { noise_sigma: 0.05, n_items: 100, ..cfg.world_config() }).unwrap();
    let items = world.records();
    let train_ids: Vec<String> = items[..N_TRAIN].iter().map(|i| i.id.clone()).collect();
    let pairs = sample_pairs(&train_ids, N_TRAIN, cfg.seed).unwrap();
    let records = generate_dataset(&DifferenceSource::Oracle, &items, &pairs, &GenerationOptions::default()).unwrap();
    let init = EncoderParams::init(cfg.encoder.clone(), cfg.seed).unwrap();
    let captions: Vec<(String, String)> = items[..N_TRAIN].iter().map(|i| (i.id.clone(), i.caption.clone())).collect();
    let (pretrained, _) = fit_captions(init.clone(), &captions, &world.images, &cfg.pretrain_config()).unwrap();
    let (finetuned, log) = fit(pretrained.clone(), &records, &world.images, &cfg.train_config()).unwrap();
    ToyRun { held_out: items[N_TRAIN..].to_vec(), world, items, records, init, pretrained, finetuned, log }
}

pub fn kind_names(world: &ToyWorld) -> Vec<String> {
    KINDS[..world.config.n_kinds].iter().map(|k| k.to_string()).collect()
}

/// "a photo of a {kind}" for every kind in the world.
pub fn kind_bank(world: &ToyWorld, encoder: &EncoderParams) -> PromptBank {
    let lines: Vec<PromptLine> = kind_names(world)
        .into_iter()
        .map(|k| PromptLine { prompt: format!("a photo of a {k}"), class: k, kind: PromptKind::Standard })
        .collect();
    PromptBank::from_lines(&lines, encoder).unwrap()
}

/// Kind-level difference `f_{b - a}` in the attribute template.
pub fn kind_difference(b: &str, a: &str, encoder: &EncoderParams) -> ClassDifference {
    let line = ClassDifferenceLine {
        class_b: b.into(),
        class_a: a.into(),
        difference_text: difference_sentence(&[b.to_string()], &[a.to_string()]),
    };
    ClassDifference::encode(&line, encoder).unwrap()
}

pub fn all_kind_differences(world: &ToyWorld, encoder: &EncoderParams) -> Vec<ClassDifference> {
    let names = kind_names(world);
    let mut out = Vec::new();
    for b in &names {
        for a in &names {
            if a != b {
                out.push(kind_difference(b, a, encoder));
            }
        }
    }
    out
}
