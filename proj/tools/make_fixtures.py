#!/usr/bin/env python3
# Copyright 2026 The gradleak Authors
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     https://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.
"""Regenerates the bundled vocabulary and corpus fixtures under data/.

The output is committed; rerunning with the same seed is byte-stable.
"""

import argparse
import pathlib
import random

DETERMINERS = ["the", "a", "this", "that", "every", "some", "my", "your", "his", "her",
               "our", "their", "no", "one", "each"]
NOUNS = ["cat", "dog", "man", "woman", "child", "teacher", "doctor", "student", "farmer",
         "king", "queen", "bird", "horse", "river", "city", "house", "garden", "book",
         "letter", "story", "movie", "song", "car", "train", "ship", "road", "forest",
         "mountain", "village", "school", "friend", "sister", "brother", "mother", "father",
         "window", "door", "table", "chair", "apple", "bread", "water", "coffee", "music",
         "picture", "game", "team", "player", "actor", "writer", "film", "plot", "scene",
         "ending", "director", "camera", "voice", "night", "morning", "winter", "summer",
         "storm", "island", "market", "church", "bridge", "tower", "lamp", "clock", "phone",
         "computer", "paper", "idea", "problem", "answer", "question", "doll", "boat",
         "ball", "box", "hat", "coat", "shoe", "key", "ring", "gift", "cake", "soup"]
VERBS = ["saw", "liked", "found", "made", "took", "gave", "read", "wrote", "built", "sold",
         "bought", "loved", "hated", "watched", "heard", "kept", "lost", "opened", "closed",
         "painted", "cleaned", "carried", "visited", "followed", "called", "helped", "met",
         "brought", "left", "forgot", "enjoyed", "praised", "ruined", "filmed", "played",
         "chased", "fixed", "moved", "washed", "needed", "wanted", "knew", "missed",
         "sent", "showed", "told", "asked", "won", "broke", "touched"]
INTRANSITIVE = ["slept", "laughed", "cried", "arrived", "smiled", "waited", "danced",
                "fell", "ran", "sang", "left", "worked", "stayed", "shouted", "jumped"]
ADJECTIVES = ["old", "young", "big", "small", "red", "blue", "green", "happy", "sad",
              "quiet", "loud", "dark", "bright", "strange", "funny", "boring", "great",
              "terrible", "beautiful", "ugly", "long", "short", "new", "cold", "warm",
              "brave", "clever", "lazy", "honest", "famous", "simple", "heavy", "empty",
              "wooden", "silver", "golden"]
ADVERBS = ["quickly", "slowly", "never", "always", "often", "rarely", "really", "very",
           "quite", "almost", "again", "today", "yesterday", "soon", "later", "here",
           "there", "together", "alone", "finally"]
PREPOSITIONS = ["in", "on", "near", "under", "behind", "with", "without", "from", "to",
                "for", "after", "before", "during", "over", "through"]
CONJUNCTIONS = ["and", "but", "because", "while", "although", "so", "when", "then"]
PRONOUNS = ["he", "she", "they", "we", "i", "you", "it", "nobody", "everyone"]
MISC = ["is", "was", "were", "not", "too", "also", "only", "just", "much", "more",
        "most", "than", "as", "of", "at", "by", "who", "which", "what", "where",
        "how", "why", "all", "both", "many", "few", "two", "three", "first", "last"]
SPECIALS = ["<pad>", "<unk>", "<bos>", "<eos>"]


def build_vocab(size):
    words = []
    for group in (DETERMINERS, NOUNS, VERBS, INTRANSITIVE, ADJECTIVES, ADVERBS,
                  PREPOSITIONS, CONJUNCTIONS, PRONOUNS, MISC):
        for w in group:
            if w not in words:
                words.append(w)
    words = words[: size - len(SPECIALS)]
    if len(words) + len(SPECIALS) != size:
        raise SystemExit(f"vocabulary too small: {len(words) + len(SPECIALS)} < {size}")
    return SPECIALS + words


class Grammar:
    def __init__(self, rng, vocab):
        self.rng = rng
        self.vocab = set(vocab)

    def pick(self, group):
        return self.rng.choice([w for w in group if w in self.vocab])

    def noun_phrase(self):
        words = [self.pick(DETERMINERS)]
        if self.rng.random() < 0.45:
            words.append(self.pick(ADJECTIVES))
        words.append(self.pick(NOUNS))
        return words

    def subject(self):
        if self.rng.random() < 0.3:
            return [self.pick(PRONOUNS)]
        return self.noun_phrase()

    def clause(self):
        words = self.subject()
        if self.rng.random() < 0.25:
            words.append(self.pick(ADVERBS))
        if self.rng.random() < 0.3:
            words.append(self.pick(INTRANSITIVE))
        else:
            words.append(self.pick(VERBS))
            words += self.noun_phrase()
        if self.rng.random() < 0.35:
            words.append(self.pick(PREPOSITIONS))
            words += self.noun_phrase()
        return words

    def short_line(self, lo, hi):
        while True:
            words = self.clause()
            if lo <= len(words) <= hi:
                return words

    def long_line(self, lo, hi):
        while True:
            words = self.clause()
            while len(words) < lo:
                words.append(self.pick(CONJUNCTIONS))
                words += self.clause()
            if len(words) <= hi:
                return words


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--out", default=str(pathlib.Path(__file__).resolve().parent.parent / "data"))
    parser.add_argument("--seed", type=int, default=20261015)
    parser.add_argument("--vocab-size", type=int, default=256)
    parser.add_argument("--short-lines", type=int, default=240)
    parser.add_argument("--long-lines", type=int, default=160)
    args = parser.parse_args()

    out = pathlib.Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    vocab = build_vocab(args.vocab_size)
    (out / "vocab.txt").write_text("\n".join(vocab) + "\n")

    rng = random.Random(args.seed)
    grammar = Grammar(rng, vocab)
    short = [" ".join(grammar.short_line(3, 8)) for _ in range(args.short_lines)]
    long = [" ".join(grammar.long_line(24, 40)) for _ in range(args.long_lines)]
    (out / "short_lines.txt").write_text("\n".join(short) + "\n")
    (out / "long_lines.txt").write_text("\n".join(long) + "\n")


if __name__ == "__main__":
    main()
