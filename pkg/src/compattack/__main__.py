from compattack.cli import main

raise SystemExit(main())
