import sys
from pathlib import Path

# sibling helper modules (_oracles) importable regardless of invocation dir
sys.path.insert(0, str(Path(__file__).parent))
