from socialref.corpus.agreement import RatingMatrix, krippendorff_alpha
from socialref.corpus.generator import GenConfig, generate_corpus, generate_session, manifest_entries

__all__ = ["GenConfig", "RatingMatrix", "generate_corpus", "generate_session",
           "krippendorff_alpha", "manifest_entries"]
