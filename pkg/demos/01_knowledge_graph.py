"""
Loading a knowledge graph
=========================

Triples come in as ``head<TAB>relation<TAB>tail`` lines. Entities get ids in
order of first appearance; augmentation adds one inverse relation per
relation plus a self-loop relation.
"""

from workgraph import augment_inverse_edges, load_kg

tsv = """revolving_door\tat_location\tbank
bank\tused_for\tmoney
revolving_door\tis_a\tdoor
door\tpart_of\tbuilding
bank\tis_a\tbuilding
"""
kg = load_kg(tsv)
print(kg)
print("entities:", kg.entity_names)

# inverse edges: r and r^-1 share a name stem, ids r and r + m
aug = augment_inverse_edges(kg)
print("relations:", [aug.relation_name(r) for r in range(2 * len(kg.base_relation_names) + 1)])

# neighbors are read straight from the CSR arrays
bank = aug.entity_id("bank")
for rel, tail in aug.neighbors(bank):
    print(f"bank --{aug.relation_name(rel)}--> {aug.entity_name(tail)}")
