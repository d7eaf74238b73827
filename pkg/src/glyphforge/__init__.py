"""glyphforge: synthetic handwritten-word datasets and a conv+BiLSTM+CTC
recognizer, built on plain numpy."""

from .autodiff import Tensor, no_grad
from .ctc import Alphabet, CtcResult, collapse, ctc_brute_force, ctc_loss, greedy_decode
from .evaluation import EditCounts, EvalReport, edit_counts, levenshtein, report, wer
from .imaging import (
    GrayRaster,
    InkThreshold,
    hjoin,
    hjoin_overlap,
    load_image,
    resize,
    save_image,
    tight_crop,
    to_grayscale,
)
from .network import ArchConfig, ModelParams, bilstm, forward, init_model, lstm_step
from .synth import (
    DatasetManifest,
    GlyphCorpus,
    JoinMode,
    Lexicon,
    SyntheticSample,
    WordSpec,
    decompose_word,
    generate_dataset,
    ingest_annotated_pages,
    load_glyph_corpus,
    load_lexicon,
    render_word,
)
from .training import (
    Checkpoint,
    TrainConfig,
    load_checkpoint,
    optimizer_step,
    save_checkpoint,
    split_dataset,
    train,
)

__version__ = "0.1.0"
