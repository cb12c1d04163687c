//! Few-shot prompts asking a language model for the visual difference
//! between two captions.

use serde::{Deserialize, Serialize};

use crate::error::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptStyle {
    /// General image-caption data.
    Coco,
    /// Fine-grained bird descriptions.
    Cub,
}

impl std::str::FromStr for PromptStyle {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "coco" => Ok(PromptStyle::Coco),
            "cub" => Ok(PromptStyle::Cub),
            other => Err(Error::Config(format!("unknown prompt style {other:?} (coco|cub)"))),
        }
    }
}

const COCO_DEMOS: &str = "\
Q: What is the visual difference between an image captioned with \u{201c}a photo of a black, small cat\u{201d} and an image captioned with \u{201c}a photo of a large, white dog\u{201d}?
A: The cat is smaller and is the color black, while the dog is larger and is white.
Q: What is the visual difference between an image captioned with \u{201c}a photo of a large, white dog\u{201d} and an image captioned with \u{201c}a photo of a black, small cat\u{201d}?
A: The dog is larger and is the color white, while the cat is smaller and black.
Q: What is the visual difference between an image captioned with \u{201c}a photo of a house\u{201d} and an image captioned with \u{201c}a photo of an airport\u{201d}?
A: The house contains furniture and homely decorations, while the airport is much larger and a public space.
Q: What is the visual difference between an image captioned with \u{201c}a photo of an airport\u{201d} and an image captioned with \u{201c}a photo of a house\u{201d}?
A: The airport contains travelers and airplanes and is a public space, while the house is smaller and is a private space.
";

const CUB_DEMOS: &str = "\
Q: What is the visual difference between an image with a description of \u{201c}a grey bird with small wings and a yellow beak\u{201d} and an image with a description of \u{201c}a blue bird with large wings and a brown beak\u{201d}?
A: Difference in color and size of the wings. One is grey and has small wings and a yellow beak, while the other is blue and has large wings and a brown beak.
Q: What is the visual difference between an image with a description of \u{201c}a brown bird with an orange beak\u{201d} and an image with a description of \u{201c} a black bird with yellow beak\u{201d}?
A: The color of the body and the beaks. One has a brown body and orange beak, while the other is black with a yellow beak.
";

/// Builds the few-shot prompt for one ordered caption pair. Captions are
/// inserted verbatim, without escaping.
pub fn build_prompt(style: PromptStyle, caption_a: &str, caption_b: &str) -> String {
    match style {
        PromptStyle::Coco => format!(
            "{COCO_DEMOS}Q: What is the visual difference between an image captioned with \u{201c}{caption_a}\u{201d} and an image captioned with \u{201c}{caption_b}\u{201d}?\nA:"
        ),
        PromptStyle::Cub => format!(
            "{CUB_DEMOS}Q: What is the visual difference between an image with a description of \u{201c}{caption_a}\u{201d} and an image with a description of \u{201c}{caption_b}\u{201d}?\nA:"
        ),
    }
}
