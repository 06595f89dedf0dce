"""
Application entrypoint.

Usage:
  python app.py prep --items items.tsv --sequences seqs.tsv
  python app.py famae-train --items items.tsv --sequences seqs.tsv --out famae.rsid
  python app.py extract --checkpoint famae.rsid --items items.tsv --out emb.rsid
  python app.py quantize --in emb.rsid --out sids.tsv --codebook cb.json --branching 32,40
  python app.py diagnose --sids sids.tsv --emb emb.rsid --report report.json
"""

from semid.adapters.cli import main

if __name__ == "__main__":
    main()
