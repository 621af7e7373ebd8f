from pathlib import Path


def test_readme_walkthrough_covers_both_phases():
    text = Path(__file__).resolve().parents[1] / "README.md"
    content = text.read_text()
    assert "## Walkthrough" in content
    assert "main.py pretrain" in content
    assert "main.py train-patches" in content
    assert "--init-checkpoint" in content
