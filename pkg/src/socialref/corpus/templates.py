"""Utterance templates for the synthetic game transcripts.

Slots: ``<REF>`` / ``<DIS>`` are player names, ``<SUBJ>``/``<OBJ>``/``<POSS>``
are third-person pronouns for the referent.
"""

NAMES = ("David", "Alice", "Thomas", "Maria", "Kevin", "Sofia")
GENDER = {"David": "m", "Alice": "f", "Thomas": "m", "Maria": "f", "Kevin": "m", "Sofia": "f"}
PRONOUNS = {
    "m": {"<SUBJ>": "he", "<OBJ>": "him", "<POSS>": "his"},
    "f": {"<SUBJ>": "she", "<OBJ>": "her", "<POSS>": "her"},
}

# no names, no second- or third-person pronouns
FILLER = (
    "i am the villager",
    "i did not look at any cards",
    "let us vote now",
    "i was the robber last night",
    "that makes sense",
    "we should think about this",
    "i am not the werewolf",
    "the seer should speak up",
    "i think there is a werewolf among us",
    "nobody switched my card",
    "i looked at the center cards",
    "that seems suspicious",
    "i woke up and did nothing",
    "okay so what do we know",
)

# second person, referent left implicit
STI = (
    "why are you lying",
    "what is your role",
    "are you the werewolf",
    "did you switch any cards",
    "what did you see last night",
    "you seem nervous",
    "can you explain that",
    "i do not trust you",
    "are you sure about your card",
    "you were very quiet",
    "tell us your role",
    "why did you vote that way",
)

# vocative forms that name the addressee
STI_VOCATIVE = ("<REF> , {}", "{} <REF>")

PCR = (
    "i think <SUBJ> was the werewolf",
    "i do not trust <OBJ>",
    "<POSS> story does not add up",
    "<SUBJ> is definitely lying",
    "i would vote for <OBJ>",
    "<SUBJ> looked very nervous",
    "i saw <OBJ> move last night",
    "<POSS> claim makes no sense",
    "i believe <OBJ> now",
    "<SUBJ> could be the seer",
    "we should watch <OBJ> closely",
    "<SUBJ> has been quiet all game",
)

# one name: the referent
ANTECEDENT = (
    "i think <REF> is the werewolf",
    "<REF> was awake last night",
    "i saw <REF> move",
    "<REF> claimed to be the seer",
    "what about <REF>",
    "<REF> said nothing so far",
    "let us talk about <REF>",
    "<REF> switched a card",
    "i robbed <REF> last night",
    "<REF> might be the troublemaker",
    "nobody has asked <REF> yet",
    "<REF> voted first last round",
)

# two names: referent and a distractor, order randomized by the generator
ANTECEDENT_PAIR = (
    "<REF> and <DIS> were both awake",
    "either <REF> or <DIS> is lying",
    "i saw <REF> look at <DIS>",
    "<REF> and <DIS> claimed the same role",
    "it is <REF> or <DIS>",
    "<REF> accused <DIS> last round",
    "i trust <REF> more than <DIS>",
    "<REF> and <DIS> keep whispering",
    "both <REF> and <DIS> looked guilty",
    "<REF> defended <DIS> earlier",
    "i suspect <REF> and <DIS>",
    "<REF> swapped with <DIS>",
)

MPP = (
    "i switched <REF> with somebody",
    "i vote for <REF>",
    "<REF> is definitely lying",
    "i robbed <REF>",
    "we should vote <REF>",
    "i looked at the card of <REF>",
    "i believe <REF>",
    "<REF> is the werewolf",
    "keep an eye on <REF>",
    "<REF> is telling the truth",
    "i swapped <REF> and nobody else",
    "<REF> must be the seer",
)

MPP_PRIME = (
    "what about <REF>",
    "let us talk about <REF>",
    "nobody has asked <REF> yet",
    "<REF> has been quiet",
)


def vocabulary():
    words = set()
    for group in (FILLER, STI, PCR, ANTECEDENT, ANTECEDENT_PAIR, MPP, MPP_PRIME):
        for t in group:
            words.update(w for w in t.split() if not w.startswith("<"))
    for mapping in PRONOUNS.values():
        words.update(mapping.values())
    words.update({",", "everyone"})
    return sorted(words)
