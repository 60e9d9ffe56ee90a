"""WER, WDER and the max-overlap baseline on hand-built examples.

Walks through word alignment, speaker-error counting under identity and
best-permutation mappings, the modified WDER that drops overlapped
reference words, and the CTM+RTTM baseline orchestrator.
"""
from worddiar.baseline import orchestrate
from worddiar.datagen import TimedWord
from worddiar.formats import parse_ctm, parse_rttm
from worddiar.metrics import align, modified_wder, wder, wer

# --- WER -------------------------------------------------------------------
ref = ["the", "cat", "sat", "down"]
hyp = ["the", "cat", "sat", "down", "now"]
al = align(ref, hyp)
w, s, d, i = wer(al, len(ref))
print(f"WER {w:.2f} (sub {s:.2f} del {d:.2f} ins {i:.2f})")

# --- WDER ------------------------------------------------------------------
# Four matches, one with the wrong speaker -> WDER 0.25.
al = align(ref, ref)
rep = wder(al, [1, 1, 2, 2], [1, 1, 2, 1])
print(f"identity WDER = {rep.wder:.2f}  (C={rep.C}, C_IS={rep.C_IS})")

# A decode whose speaker ids are a consistent relabeling scores 0 under
# the best-permutation mapping.
rep = wder(al, [1, 1, 2, 2], [2, 2, 1, 1], mapping="best_permutation")
print(f"best-permutation WDER = {rep.wder:.2f}  via mapping {rep.mapping}")

# --- modified WDER -----------------------------------------------------------
# Overlapping reference words are dropped before counting.
words = [TimedWord("the", 0.0, 1.0), TimedWord("cat", 0.5, 1.5),
         TimedWord("sat", 2.0, 3.0), TimedWord("down", 3.5, 4.0)]
rep = modified_wder(align(ref, ref), words, [1, 2, 2, 2], [2, 1, 2, 2])
print(f"modified WDER = {rep.wder:.2f}, dropped {rep.dropped_words} "
      f"of {rep.ref_words} overlapped words")

# --- max-overlap baseline ----------------------------------------------------
ctm = parse_ctm("""\
call1 1 0.10 0.40 hello
call1 1 0.60 0.30 there
call1 1 2.00 0.50 goodbye
""")
rttm = parse_rttm("""\
SPEAKER call1 1 0.000 1.100 <NA> <NA> alice <NA> <NA>
SPEAKER call1 1 1.800 1.000 <NA> <NA> bob <NA> <NA>
""")
records, fallbacks = orchestrate(ctm, rttm)
print(f"baseline records ({fallbacks} fallbacks):")
for rec in records:
    for w in rec["words"]:
        print(f"  {w['word']:<8s} speaker {w['speaker']}  frame {w['frame']}")
