from docattr.cli import main

raise SystemExit(main())
