from src.grainflow.cli import main

raise SystemExit(main())
