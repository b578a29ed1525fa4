"""
Agreement between predicted and reference importance labels
===========================================================
"""
from saoosc.importance import agreement

reference = {1: 3, 2: 3, 3: 3, 4: 2, 5: 2, 6: 1, 7: 0}
predicted = {1: 3, 2: 3, 3: 2, 4: 2, 5: 1, 6: 1}       # object 7 missing -> background

table = agreement(predicted, reference)
print(table.format())

# patch-level labels work the same way
print(agreement([0, 0, 1, 3, 3, 2], [0, 1, 1, 3, 2, 2]).format())
